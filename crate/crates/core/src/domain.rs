//! Cluster topology, model geometry and expert placements.
//!
//! Everything here is an immutable value once constructed. Constructors and
//! `validate` methods enforce the structural invariants; constraint checks on
//! a placement (coverage and per-GPU memory) live in [`validate_placement`]
//! because a placement that breaks them is still a well-formed value worth
//! reporting on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Structural errors: the inputs do not describe a well-formed cluster,
/// model, or placement.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("cluster has no servers")]
    NoServers,
    #[error("server {server} has no GPUs")]
    NoGpus { server: usize },
    #[error("server {server} gpu {gpu}: {field} must be > 0")]
    NonPositiveGpu {
        server: usize,
        gpu: usize,
        field: &'static str,
    },
    #[error("{matrix} must be {expected}x{expected}")]
    MatrixShape {
        matrix: &'static str,
        expected: usize,
    },
    #[error("link_bandwidth[{from}][{to}] must be > 0, got {value}")]
    NonPositiveBandwidth { from: usize, to: usize, value: f64 },
    #[error("link_latency[{from}][{to}] must be >= 0, got {value}")]
    NegativeLatency { from: usize, to: usize, value: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("placement dimension mismatch: {0}")]
    Dimension(String),
}

/// One GPU: the byte budget available for experts and the rate at which
/// expert weights can be loaded onto it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub memory: u64,
    pub load_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub gpus: Vec<GpuSpec>,
}

impl ServerSpec {
    /// Total expert memory across the server's GPUs.
    pub fn memory(&self) -> u64 {
        self.gpus.iter().map(|g| g.memory).sum()
    }
}

/// Servers plus the pairwise network. Link matrices are indexed
/// `[from][to]`; diagonal entries are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub servers: Vec<ServerSpec>,
    /// Bytes per second.
    pub link_bandwidth: Vec<Vec<f64>>,
    /// Seconds per message.
    pub link_latency: Vec<Vec<f64>>,
}

impl ClusterSpec {
    pub fn new(
        servers: Vec<ServerSpec>,
        link_bandwidth: Vec<Vec<f64>>,
        link_latency: Vec<Vec<f64>>,
    ) -> Result<Self, DomainError> {
        let c = Self {
            servers,
            link_bandwidth,
            link_latency,
        };
        c.validate()?;
        Ok(c)
    }

    /// Fully connected cluster where every link has the same bandwidth and
    /// latency.
    pub fn uniform(
        servers: Vec<ServerSpec>,
        bandwidth: f64,
        latency: f64,
    ) -> Result<Self, DomainError> {
        let n = servers.len();
        let bw = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { bandwidth }).collect())
            .collect();
        let lat = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { latency }).collect())
            .collect();
        Self::new(servers, bw, lat)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.servers.is_empty() {
            return Err(DomainError::NoServers);
        }
        for (s, server) in self.servers.iter().enumerate() {
            if server.gpus.is_empty() {
                return Err(DomainError::NoGpus { server: s });
            }
            for (g, gpu) in server.gpus.iter().enumerate() {
                if gpu.memory == 0 {
                    return Err(DomainError::NonPositiveGpu {
                        server: s,
                        gpu: g,
                        field: "memory",
                    });
                }
                if !(gpu.load_bandwidth > 0.0) {
                    return Err(DomainError::NonPositiveGpu {
                        server: s,
                        gpu: g,
                        field: "load_bandwidth",
                    });
                }
            }
        }
        let n = self.servers.len();
        check_square("link_bandwidth", &self.link_bandwidth, n)?;
        check_square("link_latency", &self.link_latency, n)?;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let bw = self.link_bandwidth[i][j];
                if !(bw > 0.0) {
                    return Err(DomainError::NonPositiveBandwidth {
                        from: i,
                        to: j,
                        value: bw,
                    });
                }
                let lat = self.link_latency[i][j];
                if !(lat >= 0.0) {
                    return Err(DomainError::NegativeLatency {
                        from: i,
                        to: j,
                        value: lat,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn gpus_per_server(&self) -> Vec<usize> {
        self.servers.iter().map(|s| s.gpus.len()).collect()
    }

    pub fn total_gpus(&self) -> usize {
        self.servers.iter().map(|s| s.gpus.len()).sum()
    }
}

fn check_square(name: &'static str, m: &[Vec<f64>], n: usize) -> Result<(), DomainError> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(DomainError::MatrixShape {
            matrix: name,
            expected: n,
        });
    }
    Ok(())
}

/// Geometry of the MoE model. Expert size is uniform across layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub experts_per_layer: Vec<usize>,
    pub top_k: usize,
    /// Bytes per expert.
    pub expert_size: u64,
    /// Elements per token in the hidden state.
    pub hidden_width: usize,
    pub bytes_per_element: usize,
}

impl ModelSpec {
    /// Model with the same expert count on every layer.
    pub fn homogeneous(
        num_layers: usize,
        experts: usize,
        top_k: usize,
        expert_size: u64,
    ) -> Result<Self, DomainError> {
        let m = Self {
            num_layers,
            experts_per_layer: vec![experts; num_layers],
            top_k,
            expert_size,
            hidden_width: 4096,
            bytes_per_element: 2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.num_layers == 0 {
            return Err(DomainError::InvalidModel("num_layers must be >= 1".into()));
        }
        if self.experts_per_layer.len() != self.num_layers {
            return Err(DomainError::InvalidModel(format!(
                "experts_per_layer has {} entries, expected {}",
                self.experts_per_layer.len(),
                self.num_layers
            )));
        }
        if let Some(l) = self.experts_per_layer.iter().position(|&e| e == 0) {
            return Err(DomainError::InvalidModel(format!(
                "layer {l} has no experts"
            )));
        }
        let min_e = self.experts_per_layer.iter().copied().min().unwrap_or(0);
        if self.top_k == 0 || self.top_k > min_e {
            return Err(DomainError::InvalidModel(format!(
                "top_k must be in [1, {min_e}], got {}",
                self.top_k
            )));
        }
        if self.expert_size == 0 {
            return Err(DomainError::InvalidModel("expert_size must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_experts(&self) -> usize {
        self.experts_per_layer.iter().sum()
    }

    /// Bytes of one token's hidden state.
    pub fn token_bytes(&self) -> f64 {
        (self.hidden_width * self.bytes_per_element) as f64
    }
}

/// Whole-server slot budget: `floor(M_n / m_e)` with `M_n` the summed GPU
/// memory of the server.
pub fn server_capacity(cluster: &ClusterSpec, server: usize, model: &ModelSpec) -> usize {
    (cluster.servers[server].memory() / model.expert_size) as usize
}

/// Slots that can actually be packed onto the server's GPUs, i.e.
/// `sum_g floor(mem_g / m_e)`. Never exceeds [`server_capacity`].
pub fn packable_slots(cluster: &ClusterSpec, server: usize, model: &ModelSpec) -> usize {
    cluster.servers[server]
        .gpus
        .iter()
        .map(|g| (g.memory / model.expert_size) as usize)
        .sum()
}

/// Expert occupancy `z[server][gpu][layer][expert]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    occupancy: Vec<Vec<Vec<Vec<bool>>>>,
    experts_per_layer: Vec<usize>,
}

impl Placement {
    /// An empty placement shaped for the given cluster and model.
    pub fn empty(cluster: &ClusterSpec, model: &ModelSpec) -> Self {
        Self::with_shape(&cluster.gpus_per_server(), &model.experts_per_layer)
    }

    pub fn with_shape(gpus_per_server: &[usize], experts_per_layer: &[usize]) -> Self {
        let occupancy = gpus_per_server
            .iter()
            .map(|&g| {
                (0..g)
                    .map(|_| experts_per_layer.iter().map(|&e| vec![false; e]).collect())
                    .collect()
            })
            .collect();
        Self {
            occupancy,
            experts_per_layer: experts_per_layer.to_vec(),
        }
    }

    pub fn num_servers(&self) -> usize {
        self.occupancy.len()
    }

    pub fn num_gpus(&self, server: usize) -> usize {
        self.occupancy[server].len()
    }

    pub fn num_layers(&self) -> usize {
        self.experts_per_layer.len()
    }

    pub fn experts_per_layer(&self) -> &[usize] {
        &self.experts_per_layer
    }

    pub fn gpus_per_server(&self) -> Vec<usize> {
        self.occupancy.iter().map(|s| s.len()).collect()
    }

    pub fn set(&mut self, server: usize, gpu: usize, layer: usize, expert: usize, value: bool) {
        self.occupancy[server][gpu][layer][expert] = value;
    }

    pub fn place(&mut self, server: usize, gpu: usize, layer: usize, expert: usize) {
        self.set(server, gpu, layer, expert, true);
    }

    pub fn holds(&self, server: usize, gpu: usize, layer: usize, expert: usize) -> bool {
        self.occupancy[server][gpu][layer][expert]
    }

    /// True if any GPU of `server` holds the expert.
    pub fn server_holds(&self, server: usize, layer: usize, expert: usize) -> bool {
        self.occupancy[server].iter().any(|g| g[layer][expert])
    }

    /// `A_n^l`: experts of `layer` present somewhere on `server`, ascending.
    pub fn server_set(&self, server: usize, layer: usize) -> Vec<usize> {
        (0..self.experts_per_layer[layer])
            .filter(|&e| self.server_holds(server, layer, e))
            .collect()
    }

    /// Experts held by one GPU, across all layers.
    pub fn gpu_count(&self, server: usize, gpu: usize) -> usize {
        self.occupancy[server][gpu]
            .iter()
            .map(|layer| layer.iter().filter(|&&z| z).count())
            .sum()
    }

    /// Servers holding the expert, ascending.
    pub fn holders(&self, layer: usize, expert: usize) -> Vec<usize> {
        (0..self.num_servers())
            .filter(|&n| self.server_holds(n, layer, expert))
            .collect()
    }

    /// Total placed expert copies.
    pub fn total_copies(&self) -> usize {
        (0..self.num_servers())
            .map(|n| (0..self.num_gpus(n)).map(|g| self.gpu_count(n, g)).sum::<usize>())
            .sum()
    }

    pub fn check_shape(&self, cluster: &ClusterSpec, model: &ModelSpec) -> Result<(), DomainError> {
        if self.gpus_per_server() != cluster.gpus_per_server() {
            return Err(DomainError::Dimension(format!(
                "placement has gpus {:?}, cluster has {:?}",
                self.gpus_per_server(),
                cluster.gpus_per_server()
            )));
        }
        if self.experts_per_layer != model.experts_per_layer {
            return Err(DomainError::Dimension(format!(
                "placement has experts per layer {:?}, model has {:?}",
                self.experts_per_layer, model.experts_per_layer
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Placement) -> bool {
        self.experts_per_layer == other.experts_per_layer
            && self.gpus_per_server() == other.gpus_per_server()
    }

    pub fn to_wire(&self) -> PlacementWire {
        let layers = (0..self.num_layers())
            .map(|l| LayerWire {
                layer: l,
                servers: self
                    .occupancy
                    .iter()
                    .enumerate()
                    .map(|(n, gpus)| ServerWire {
                        server: n,
                        gpus: gpus
                            .iter()
                            .map(|g| {
                                g[l].iter()
                                    .enumerate()
                                    .filter(|(_, &z)| z)
                                    .map(|(e, _)| e)
                                    .collect()
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        PlacementWire { layers }
    }

    /// Rebuild from the wire form. The shape comes from the cluster and model
    /// the placement is meant for; anything out of range is a
    /// [`DomainError::Dimension`].
    pub fn from_wire(
        wire: &PlacementWire,
        cluster: &ClusterSpec,
        model: &ModelSpec,
    ) -> Result<Self, DomainError> {
        let mut p = Placement::empty(cluster, model);
        for lw in &wire.layers {
            if lw.layer >= model.num_layers {
                return Err(DomainError::Dimension(format!("layer {} out of range", lw.layer)));
            }
            for sw in &lw.servers {
                if sw.server >= cluster.num_servers() {
                    return Err(DomainError::Dimension(format!(
                        "server {} out of range",
                        sw.server
                    )));
                }
                let gpus = cluster.servers[sw.server].gpus.len();
                if sw.gpus.len() > gpus {
                    return Err(DomainError::Dimension(format!(
                        "server {} lists {} gpus, has {gpus}",
                        sw.server,
                        sw.gpus.len()
                    )));
                }
                for (g, experts) in sw.gpus.iter().enumerate() {
                    for &e in experts {
                        if e >= model.experts_per_layer[lw.layer] {
                            return Err(DomainError::Dimension(format!(
                                "layer {} expert {e} out of range",
                                lw.layer
                            )));
                        }
                        if p.holds(sw.server, g, lw.layer, e) {
                            return Err(DomainError::Dimension(format!(
                                "layer {} expert {e} listed twice on server {} gpu {g}",
                                lw.layer, sw.server
                            )));
                        }
                        p.place(sw.server, g, lw.layer, e);
                    }
                }
            }
        }
        Ok(p)
    }
}

/// JSON form: `{"layers":[{"layer":0,"servers":[{"server":0,"gpus":[[ids]]}]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementWire {
    pub layers: Vec<LayerWire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWire {
    pub layer: usize,
    pub servers: Vec<ServerWire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerWire {
    pub server: usize,
    pub gpus: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Expert not placed on any GPU.
    Coverage { layer: usize, expert: usize },
    /// GPU holds more expert bytes than its budget.
    Memory {
        server: usize,
        gpu: usize,
        used: u64,
        capacity: u64,
        over: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check coverage and per-GPU memory. A shape mismatch is an `Err`; a
/// well-shaped placement always yields a report.
pub fn validate_placement(
    placement: &Placement,
    cluster: &ClusterSpec,
    model: &ModelSpec,
) -> Result<ValidationReport, DomainError> {
    placement.check_shape(cluster, model)?;
    let mut violations = Vec::new();
    for (l, &experts) in model.experts_per_layer.iter().enumerate() {
        for e in 0..experts {
            if placement.holders(l, e).is_empty() {
                violations.push(Violation::Coverage { layer: l, expert: e });
            }
        }
    }
    for (n, server) in cluster.servers.iter().enumerate() {
        for (g, gpu) in server.gpus.iter().enumerate() {
            let used = placement.gpu_count(n, g) as u64 * model.expert_size;
            if used > gpu.memory {
                violations.push(Violation::Memory {
                    server: n,
                    gpu: g,
                    used,
                    capacity: gpu.memory,
                    over: used - gpu.memory,
                });
            }
        }
    }
    Ok(ValidationReport { violations })
}

/// Pack per-server expert sets onto GPUs. Each expert goes to the GPU with
/// the most free memory that can still take it (ties to the lowest GPU
/// index). `sets[server][layer]` lists expert ids.
pub fn pack_server_sets(
    cluster: &ClusterSpec,
    model: &ModelSpec,
    sets: &[Vec<Vec<usize>>],
) -> Result<Placement, PackError> {
    let mut p = Placement::empty(cluster, model);
    for (n, server_sets) in sets.iter().enumerate() {
        let gpus = &cluster.servers[n].gpus;
        let mut free: Vec<u64> = gpus.iter().map(|g| g.memory).collect();
        for (l, experts) in server_sets.iter().enumerate() {
            for &e in experts {
                let target = (0..gpus.len())
                    .filter(|&g| free[g] >= model.expert_size)
                    .max_by(|&a, &b| free[a].cmp(&free[b]).then(b.cmp(&a)));
                let Some(g) = target else {
                    return Err(PackError {
                        server: n,
                        layer: l,
                        expert: e,
                    });
                };
                free[g] -= model.expert_size;
                p.place(n, g, l, e);
            }
        }
    }
    Ok(p)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("server {server} has no GPU with room for layer {layer} expert {expert}")]
pub struct PackError {
    pub server: usize,
    pub layer: usize,
    pub expert: usize,
}

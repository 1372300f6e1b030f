use std::collections::BTreeMap;
use std::fmt;

use super::SimError;

/// Simulated node identifier. Id 0 is the gateway.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const GATEWAY: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Switch port number on a cluster head. Port 0 is the uplink to the
/// gateway; device ports start at 1.
pub type Port = u16;

pub const UPLINK_PORT: Port = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct TopologySpec {
    pub clusters: u32,
    pub devices_per_cluster: u32,
    pub link_loss_rate: f64,
    pub seed: u64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec {
            clusters: 2,
            devices_per_cluster: 4,
            link_loss_rate: 0.0,
            seed: 1,
        }
    }
}

impl TopologySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.clusters == 0 {
            return Err(SimError::Config("clusters must be at least 1".into()));
        }
        if self.devices_per_cluster == 0 {
            return Err(SimError::Config("devices_per_cluster must be at least 1".into()));
        }
        if self.devices_per_cluster >= u16::MAX as u32 {
            return Err(SimError::Config("devices_per_cluster exceeds port space".into()));
        }
        if !(0.0..=1.0).contains(&self.link_loss_rate) || self.link_loss_rate.is_nan() {
            return Err(SimError::Config("link_loss_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRole {
    Gateway,
    ClusterHead { cluster: u32 },
    Device { cluster: u32, head: NodeId, port: Port },
}

/// Static star-of-stars: every device hangs off its cluster head, every
/// head hangs off the gateway.
#[derive(Clone, Debug)]
pub struct Topology {
    roles: BTreeMap<NodeId, NodeRole>,
    clusters: u32,
    devices_per_cluster: u32,
}

impl Topology {
    pub fn build(spec: &TopologySpec) -> Result<Self, SimError> {
        spec.validate()?;
        let mut roles = BTreeMap::new();
        roles.insert(NodeId::GATEWAY, NodeRole::Gateway);
        for c in 0..spec.clusters {
            roles.insert(NodeId(1 + c), NodeRole::ClusterHead { cluster: c });
        }
        for c in 0..spec.clusters {
            for i in 0..spec.devices_per_cluster {
                let id = NodeId(1 + spec.clusters + c * spec.devices_per_cluster + i);
                roles.insert(
                    id,
                    NodeRole::Device {
                        cluster: c,
                        head: NodeId(1 + c),
                        port: (i + 1) as Port,
                    },
                );
            }
        }
        Ok(Topology {
            roles,
            clusters: spec.clusters,
            devices_per_cluster: spec.devices_per_cluster,
        })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, node: NodeId) -> Option<NodeRole> {
        self.roles.get(&node).copied()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.roles.contains_key(&node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles.keys().copied()
    }

    pub fn heads(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles
            .iter()
            .filter(|(_, r)| matches!(r, NodeRole::ClusterHead { .. }))
            .map(|(n, _)| *n)
    }

    pub fn devices(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.roles
            .iter()
            .filter(|(_, r)| matches!(r, NodeRole::Device { .. }))
            .map(|(n, _)| *n)
    }

    pub fn is_device(&self, node: NodeId) -> bool {
        matches!(self.role(node), Some(NodeRole::Device { .. }))
    }

    pub fn is_head(&self, node: NodeId) -> bool {
        matches!(self.role(node), Some(NodeRole::ClusterHead { .. }))
    }

    pub fn cluster_of(&self, node: NodeId) -> Option<u32> {
        match self.role(node)? {
            NodeRole::ClusterHead { cluster } | NodeRole::Device { cluster, .. } => Some(cluster),
            NodeRole::Gateway => None,
        }
    }

    pub fn head_of(&self, device: NodeId) -> Option<NodeId> {
        match self.role(device)? {
            NodeRole::Device { head, .. } => Some(head),
            _ => None,
        }
    }

    pub fn port_of(&self, device: NodeId) -> Option<Port> {
        match self.role(device)? {
            NodeRole::Device { port, .. } => Some(port),
            _ => None,
        }
    }

    /// The device attached to `port` of cluster head `head`.
    pub fn device_at(&self, head: NodeId, port: Port) -> Option<NodeId> {
        let NodeRole::ClusterHead { cluster } = self.role(head)? else {
            return None;
        };
        if port == UPLINK_PORT || port as u32 > self.devices_per_cluster {
            return None;
        }
        Some(NodeId(
            1 + self.clusters + cluster * self.devices_per_cluster + (port as u32 - 1),
        ))
    }

    /// Other devices of the same cluster.
    pub fn cluster_peers(&self, device: NodeId) -> Vec<NodeId> {
        let Some(cluster) = self.cluster_of(device) else {
            return Vec::new();
        };
        self.devices()
            .filter(|d| *d != device && self.cluster_of(*d) == Some(cluster))
            .collect()
    }

    /// Direct links are device<->head and head<->gateway, both directions.
    pub fn has_link(&self, a: NodeId, b: NodeId) -> bool {
        match (self.role(a), self.role(b)) {
            (Some(NodeRole::Device { head, .. }), Some(NodeRole::ClusterHead { .. })) => head == b,
            (Some(NodeRole::ClusterHead { .. }), Some(NodeRole::Device { head, .. })) => head == a,
            (Some(NodeRole::ClusterHead { .. }), Some(NodeRole::Gateway))
            | (Some(NodeRole::Gateway), Some(NodeRole::ClusterHead { .. })) => true,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_ids() {
        let topo = Topology::build(&TopologySpec {
            clusters: 2,
            devices_per_cluster: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(topo.len(), 9);
        assert_eq!(topo.heads().count(), 2);
        assert_eq!(topo.devices().count(), 6);
        assert_eq!(topo.head_of(NodeId(3)), Some(NodeId(1)));
        assert_eq!(topo.head_of(NodeId(6)), Some(NodeId(2)));
        assert_eq!(topo.device_at(NodeId(2), 1), Some(NodeId(6)));
        assert_eq!(topo.device_at(NodeId(2), 4), None);
        assert_eq!(topo.cluster_peers(NodeId(3)), vec![NodeId(4), NodeId(5)]);
        assert!(topo.has_link(NodeId(3), NodeId(1)));
        assert!(!topo.has_link(NodeId(3), NodeId(2)));
        assert!(!topo.has_link(NodeId(3), NodeId::GATEWAY));
    }

    #[test]
    fn zero_sizes_rejected() {
        for (c, d) in [(0, 3), (3, 0)] {
            let spec = TopologySpec {
                clusters: c,
                devices_per_cluster: d,
                ..Default::default()
            };
            assert!(matches!(Topology::build(&spec), Err(SimError::Config(_))));
        }
        let spec = TopologySpec {
            link_loss_rate: 1.5,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}

//! Binary forest container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic        5 bytes  "ADLS1"
//! version      u16
//! scenario     u8       0 = rgbd, 1 = depth only, 255 = unspecified
//! n_features   u32
//! n_trees      u32
//! per tree:
//!   n_nodes    u32
//!   per node:  feature i32 (-1 for leaves), threshold f64, left u32,
//!              right u32, prediction f64, count u32
//! ```

use std::fs;
use std::path::Path;

use crate::config::Scenario;
use crate::error::{Error, Result};

use super::{Node, RegressionForest, RegressionTree};

pub const MAGIC: &[u8; 5] = b"ADLS1";
pub const FORMAT_VERSION: u16 = 1;
const NO_SCENARIO: u8 = 255;
const NODE_BYTES: usize = 4 + 8 + 4 + 4 + 8 + 4;

pub fn serialize_forest(forest: &RegressionForest, scenario: Option<Scenario>) -> Vec<u8> {
    let nodes: usize = forest.trees().iter().map(|t| t.nodes().len()).sum();
    let mut out = Vec::with_capacity(16 + forest.n_trees() * 4 + nodes * NODE_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(scenario.map_or(NO_SCENARIO, Scenario::tag));
    out.extend_from_slice(&(forest.n_features() as u32).to_le_bytes());
    out.extend_from_slice(&(forest.n_trees() as u32).to_le_bytes());
    for tree in forest.trees() {
        out.extend_from_slice(&(tree.nodes().len() as u32).to_le_bytes());
        for n in tree.nodes() {
            out.extend_from_slice(&n.feature.to_le_bytes());
            out.extend_from_slice(&n.threshold.to_le_bytes());
            out.extend_from_slice(&n.left.to_le_bytes());
            out.extend_from_slice(&n.right.to_le_bytes());
            out.extend_from_slice(&n.value.to_le_bytes());
            out.extend_from_slice(&n.count.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Corrupt(format!("stream ends inside {what} at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take(what).map(u32::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take(what).map(f64::from_le_bytes)
    }
}

/// Parses a container, returning the forest and its scenario tag.
pub fn deserialize_forest(bytes: &[u8]) -> Result<(RegressionForest, Option<Scenario>)> {
    if bytes.is_empty() {
        return Err(Error::Corrupt("empty stream".into()));
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 5] = r.take("magic")?;
    if &magic != MAGIC {
        return Err(Error::ContainerFormat(format!("bad magic {magic:?}")));
    }
    let version = u16::from_le_bytes(r.take("version")?);
    if version != FORMAT_VERSION {
        return Err(Error::ContainerFormat(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let [tag] = r.take::<1>("scenario")?;
    let scenario = match tag {
        NO_SCENARIO => None,
        t => Some(
            Scenario::from_tag(t).ok_or_else(|| Error::ContainerFormat(format!("unknown scenario tag {t}")))?,
        ),
    };
    let n_features = r.u32("feature count")? as usize;
    let n_trees = r.u32("tree count")? as usize;
    if n_trees == 0 {
        return Err(Error::Corrupt("forest without trees".into()));
    }
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let n_nodes = r.u32("node count")? as usize;
        if n_nodes.saturating_mul(NODE_BYTES) > bytes.len() - r.pos {
            return Err(Error::Corrupt(format!("tree claims {n_nodes} nodes past end of stream")));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            nodes.push(Node {
                feature: i32::from_le_bytes(r.take("node")?),
                threshold: r.f64("node")?,
                left: r.u32("node")?,
                right: r.u32("node")?,
                value: r.f64("node")?,
                count: r.u32("node")?,
            });
        }
        trees.push(RegressionTree::from_nodes(nodes, n_features)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((RegressionForest::from_trees(trees, n_features)?, scenario))
}

pub fn write_forest(path: impl AsRef<Path>, forest: &RegressionForest, scenario: Option<Scenario>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize_forest(forest, scenario)).map_err(|e| Error::io(path, e))
}

pub fn read_forest(path: impl AsRef<Path>) -> Result<(RegressionForest, Option<Scenario>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    deserialize_forest(&bytes)
}

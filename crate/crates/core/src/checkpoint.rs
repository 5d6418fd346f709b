//! Checkpoint container: one JSON header line naming every array (shape and
//! byte offset), followed by the raw little-endian `f64` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{NetState, Network, NetworkConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "lcn4-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload that follows the header line.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: String,
    network: NetworkConfig,
    base_classes: usize,
    seed: u64,
    arrays: Vec<ArrayEntry>,
}

fn named_arrays(net: &Network, state: &NetState) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f64>)> = net
        .params()
        .iter()
        .map(|(_, p)| {
            (
                p.name.clone(),
                p.value.shape().to_vec(),
                p.value.data().to_vec(),
            )
        })
        .collect();
    for (i, bn) in state.bn.iter().enumerate() {
        out.push((
            format!("state.bn{i}.mean"),
            vec![bn.mean.len()],
            bn.mean.clone(),
        ));
        out.push((
            format!("state.bn{i}.var"),
            vec![bn.var.len()],
            bn.var.clone(),
        ));
    }
    for (i, bank) in state.banks.iter().enumerate() {
        let c = bank.centroids();
        out.push((
            format!("state.bank{i}.centroids"),
            c.shape().to_vec(),
            c.data().to_vec(),
        ));
        out.push((
            format!("state.bank{i}.initialized"),
            vec![1],
            vec![f64::from(u8::from(bank.is_initialized()))],
        ));
    }
    out
}

/// Serializes parameters, batch-norm statistics and centroid banks.
pub fn to_bytes(net: &Network, state: &NetState) -> Result<Vec<u8>> {
    let arrays = named_arrays(net, state);
    let mut entries = Vec::with_capacity(arrays.len());
    let mut payload = Vec::new();
    for (name, shape, data) in arrays {
        entries.push(ArrayEntry {
            name,
            shape,
            offset: payload.len(),
        });
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION.into(),
        network: net.config().clone(),
        base_classes: net.base_classes(),
        seed: net.seed(),
        arrays: entries,
    };
    let mut bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("cannot encode header: {e}")))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    Ok(bytes)
}

pub fn save(path: &Path, net: &Network, state: &NetState) -> Result<()> {
    let bytes = to_bytes(net, state)?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Rebuilds a network and its state from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<(Network, NetState)> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {:?}",
            header.version
        )));
    }
    let payload = &bytes[split + 1..];
    let read = |e: &ArrayEntry| -> Result<Vec<f64>> {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 8 * n;
        let raw = payload.get(e.offset..end).ok_or_else(|| {
            Error::Checkpoint(format!("array {} runs past the end of the file", e.name))
        })?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let (mut net, mut state) =
        Network::new(header.network.clone(), header.base_classes, header.seed)?;
    let expected = named_arrays(&net, &state);
    if expected.len() != header.arrays.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} arrays, found {}",
            expected.len(),
            header.arrays.len()
        )));
    }
    let mut values = Vec::with_capacity(header.arrays.len());
    for ((name, shape, _), entry) in expected.iter().zip(&header.arrays) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Checkpoint(format!(
                "array {} {:?} does not match expected {} {:?}",
                entry.name, entry.shape, name, shape
            )));
        }
        values.push(read(entry)?);
    }
    let mut it = values.into_iter();
    let n_params = net.params().len();
    let params: Vec<Tensor> = header.arrays[..n_params]
        .iter()
        .zip(it.by_ref().take(n_params))
        .map(|(e, v)| Tensor::new(e.shape.clone(), v).map_err(Error::from))
        .collect::<Result<_>>()?;
    net.restore_params(params)?;
    for bn in &mut state.bn {
        bn.mean = it.next().expect("counted");
        bn.var = it.next().expect("counted");
    }
    for bank in &mut state.banks {
        let centroids = it.next().expect("counted");
        let flag = it.next().expect("counted");
        bank.restore(centroids, flag[0] != 0.0)?;
    }
    Ok((net, state))
}

pub fn load(path: &Path) -> Result<(Network, NetState)> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

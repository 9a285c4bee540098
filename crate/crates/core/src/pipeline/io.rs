//! Versioned binary registry files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           4 bytes   "MSGT"
//! format version  u32       currently 1
//! start stage     u32
//! stage count     u32
//! per stage:
//!   gamma u32, omega u32, depth u32, widths: depth x u32
//!   per weight matrix (depth - 1 of them, rows = widths[l], cols = widths[l+1]):
//!     transferred rows u32, transferred cols u32
//!     live weights      rows*cols f64, row-major   + crc32 u32
//!     snapshot weights  rows*cols f64, row-major   + crc32 u32
//!     live bias         cols f64                   + crc32 u32
//!     snapshot bias     cols f64                   + crc32 u32
//!     pf weights        ceil(rows*cols/8) bytes, row-major, LSB-first + crc32
//!     pb weights        same                                          + crc32
//!     pf bias           ceil(cols/8) bytes, LSB-first                 + crc32
//!     pb bias           same                                          + crc32
//!   train config    u32 byte length, UTF-8 key=value lines + crc32 u32
//!   transfer report u32 byte length (0 = none), same encoding + crc32 u32
//! ```
//!
//! Every array carries its own CRC32 so corruption is reported per array,
//! distinctly from truncation and version mismatches.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{ModelRegistry, RegistryEntry};
use crate::engine::{Activation, LayerParams, OptimizerKind, StageNetwork, TrainConfig};
use crate::error::{Error, Result};
use crate::topology::Topology;
use crate::transfer::TransferReport;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MSGT";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn checksummed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
        self.u32(crc32fast::hash(bytes));
    }

    fn f64_array(&mut self, values: impl Iterator<Item = f64>) {
        let mut bytes = Vec::new();
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.checksummed(&bytes);
    }

    fn bit_array(&mut self, values: impl Iterator<Item = f64>) {
        let mut bytes = Vec::new();
        let mut current = 0u8;
        let mut filled = 0u8;
        for v in values {
            if v == 1.0 {
                current |= 1 << filled;
            }
            filled += 1;
            if filled == 8 {
                bytes.push(current);
                current = 0;
                filled = 0;
            }
        }
        if filled > 0 {
            bytes.push(current);
        }
        self.checksummed(&bytes);
    }

    fn text_block(&mut self, text: &str) {
        self.u32(text.len() as u32);
        self.checksummed(text.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                context: context.to_string(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn checksummed(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        let data = self.take(n, context)?;
        let want = self.u32(context)?;
        if crc32fast::hash(data) != want {
            return Err(Error::ChecksumMismatch {
                context: context.to_string(),
            });
        }
        Ok(data)
    }

    fn f64_array(&mut self, count: usize, context: &str) -> Result<Vec<f64>> {
        let data = self.checksummed(count * 8, context)?;
        Ok(data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn bit_array(&mut self, count: usize, context: &str) -> Result<Vec<f64>> {
        let data = self.checksummed(count.div_ceil(8), context)?;
        Ok((0..count)
            .map(|i| {
                if data[i / 8] & (1 << (i % 8)) != 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn text_block(&mut self, context: &str) -> Result<String> {
        let len = self.u32(context)? as usize;
        let data = self.checksummed(len, context)?;
        String::from_utf8(data.to_vec())
            .map_err(|_| Error::Manifest(format!("{context}: invalid UTF-8")))
    }
}

fn config_to_text(c: &TrainConfig) -> String {
    let optimizer = match c.optimizer {
        OptimizerKind::Adam => "adam",
        OptimizerKind::Sgd => "sgd",
    };
    format!(
        "rho={}\ngamma={}\nomega={}\neta0={}\ndecay_omega={}\ndecay_phi={}\nepochs={}\n\
         batch_size={}\ndropout_p={}\nda_lambda={}\nshared_mask={}\nprev_score_feature={}\n\
         seed={}\noptimizer={}\n",
        c.rho,
        c.gamma,
        c.omega,
        c.eta0,
        c.decay_omega,
        c.decay_phi,
        c.epochs,
        c.batch_size,
        c.dropout_p,
        c.da_lambda,
        c.shared_mask,
        c.prev_score_feature,
        c.seed,
        optimizer
    )
}

fn parse_kv(text: &str, context: &str) -> Result<std::collections::BTreeMap<String, String>> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Manifest(format!("{context}: malformed line '{line}'")))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(
    map: &std::collections::BTreeMap<String, String>,
    key: &str,
    context: &str,
) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Manifest(format!("{context}: missing key '{key}'")))?
        .parse()
        .map_err(|_| Error::Manifest(format!("{context}: bad value for '{key}'")))
}

fn config_from_text(text: &str) -> Result<TrainConfig> {
    let ctx = "train config block";
    let map = parse_kv(text, ctx)?;
    let optimizer = match map.get("optimizer").map(String::as_str) {
        Some("adam") => OptimizerKind::Adam,
        Some("sgd") => OptimizerKind::Sgd,
        other => {
            return Err(Error::Manifest(format!(
                "{ctx}: unknown optimizer {other:?}"
            )))
        }
    };
    Ok(TrainConfig {
        rho: field(&map, "rho", ctx)?,
        gamma: field(&map, "gamma", ctx)?,
        omega: field(&map, "omega", ctx)?,
        eta0: field(&map, "eta0", ctx)?,
        decay_omega: field(&map, "decay_omega", ctx)?,
        decay_phi: field(&map, "decay_phi", ctx)?,
        epochs: field(&map, "epochs", ctx)?,
        batch_size: field(&map, "batch_size", ctx)?,
        dropout_p: field(&map, "dropout_p", ctx)?,
        da_lambda: field(&map, "da_lambda", ctx)?,
        shared_mask: field(&map, "shared_mask", ctx)?,
        prev_score_feature: field(&map, "prev_score_feature", ctx)?,
        seed: field(&map, "seed", ctx)?,
        optimizer,
    })
}

fn report_to_text(r: &TransferReport) -> String {
    let regions: Vec<String> = r
        .regions
        .iter()
        .map(|(rows, cols)| format!("{rows}:{cols}"))
        .collect();
    format!(
        "stage_index={}\ntransferred_params={}\nfresh_params={}\nregions={}\n\
         pf_ones_fraction={}\npb_ones_fraction={}\nmask_seed={}\n",
        r.stage_index,
        r.transferred_params,
        r.fresh_params,
        regions.join(";"),
        r.pf_ones_fraction,
        r.pb_ones_fraction,
        r.mask_seed
    )
}

fn report_from_text(text: &str) -> Result<TransferReport> {
    let ctx = "transfer report block";
    let map = parse_kv(text, ctx)?;
    let regions_raw: String = field(&map, "regions", ctx)?;
    let mut regions = Vec::new();
    if !regions_raw.is_empty() {
        for part in regions_raw.split(';') {
            let (r, c) = part
                .split_once(':')
                .ok_or_else(|| Error::Manifest(format!("{ctx}: bad region '{part}'")))?;
            regions.push((
                r.parse()
                    .map_err(|_| Error::Manifest(format!("{ctx}: bad region rows")))?,
                c.parse()
                    .map_err(|_| Error::Manifest(format!("{ctx}: bad region cols")))?,
            ));
        }
    }
    Ok(TransferReport {
        stage_index: field(&map, "stage_index", ctx)?,
        transferred_params: field(&map, "transferred_params", ctx)?,
        fresh_params: field(&map, "fresh_params", ctx)?,
        regions,
        pf_ones_fraction: field(&map, "pf_ones_fraction", ctx)?,
        pb_ones_fraction: field(&map, "pb_ones_fraction", ctx)?,
        mask_seed: field(&map, "mask_seed", ctx)?,
    })
}

/// Serializes the registry to bytes in the documented layout.
pub fn registry_to_bytes(registry: &ModelRegistry) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(registry.start_stage as u32);
    w.u32(registry.entries.len() as u32);
    for entry in &registry.entries {
        let net = &entry.network;
        w.u32(net.topology.gamma as u32);
        w.u32(net.topology.omega as u32);
        w.u32(net.topology.widths.len() as u32);
        for &width in &net.topology.widths {
            w.u32(width as u32);
        }
        for layer in &net.layers {
            w.u32(layer.transferred_region.0 as u32);
            w.u32(layer.transferred_region.1 as u32);
            w.f64_array(layer.live_weights.iter().copied());
            w.f64_array(layer.snapshot_weights.iter().copied());
            w.f64_array(layer.live_bias.iter().copied());
            w.f64_array(layer.snapshot_bias.iter().copied());
            w.bit_array(layer.pf_weights.iter().copied());
            w.bit_array(layer.pb_weights.iter().copied());
            w.bit_array(layer.pf_bias.iter().copied());
            w.bit_array(layer.pb_bias.iter().copied());
        }
        w.text_block(&config_to_text(&entry.config));
        match &entry.report {
            Some(report) => w.text_block(&report_to_text(report)),
            None => w.text_block(""),
        }
    }
    w.buf
}

/// Parses registry bytes, verifying magic, version, and per-array checksums.
pub fn registry_from_bytes(bytes: &[u8]) -> Result<ModelRegistry> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let start_stage = r.u32("start stage")? as usize;
    let stage_count = r.u32("stage count")? as usize;
    let mut registry = ModelRegistry::new(start_stage);
    for s in 0..stage_count {
        let gamma = r.u32(&format!("stage {s} gamma"))? as usize;
        let omega = r.u32(&format!("stage {s} omega"))? as usize;
        let depth = r.u32(&format!("stage {s} depth"))? as usize;
        let mut widths = Vec::with_capacity(depth);
        for i in 0..depth {
            widths.push(r.u32(&format!("stage {s} width {i}"))? as usize);
        }
        let topology = Topology {
            widths: widths.clone(),
            gamma,
            omega,
        };
        topology.validate()?;
        let mut layers = Vec::with_capacity(depth - 1);
        for l in 0..depth - 1 {
            let rows = widths[l];
            let cols = widths[l + 1];
            let ctx = |what: &str| format!("stage {s} layer {l} {what}");
            let t_rows = r.u32(&ctx("transferred rows"))? as usize;
            let t_cols = r.u32(&ctx("transferred cols"))? as usize;
            let live_weights = Array2::from_shape_vec(
                (rows, cols),
                r.f64_array(rows * cols, &ctx("live weights"))?,
            )
            .expect("shape matches");
            let snapshot_weights = Array2::from_shape_vec(
                (rows, cols),
                r.f64_array(rows * cols, &ctx("snapshot weights"))?,
            )
            .expect("shape matches");
            let live_bias = Array1::from_vec(r.f64_array(cols, &ctx("live bias"))?);
            let snapshot_bias = Array1::from_vec(r.f64_array(cols, &ctx("snapshot bias"))?);
            let pf_weights =
                Array2::from_shape_vec((rows, cols), r.bit_array(rows * cols, &ctx("pf weights"))?)
                    .expect("shape matches");
            let pb_weights =
                Array2::from_shape_vec((rows, cols), r.bit_array(rows * cols, &ctx("pb weights"))?)
                    .expect("shape matches");
            let pf_bias = Array1::from_vec(r.bit_array(cols, &ctx("pf bias"))?);
            let pb_bias = Array1::from_vec(r.bit_array(cols, &ctx("pb bias"))?);
            layers.push(LayerParams {
                live_weights,
                live_bias,
                snapshot_weights,
                snapshot_bias,
                pf_weights,
                pf_bias,
                pb_weights,
                pb_bias,
                transferred_region: (t_rows, t_cols),
            });
        }
        let network = StageNetwork {
            topology,
            layers,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        };
        network.validate()?;
        let config = config_from_text(&r.text_block(&format!("stage {s} config"))?)?;
        let report_text = r.text_block(&format!("stage {s} report"))?;
        let report = if report_text.is_empty() {
            None
        } else {
            Some(report_from_text(&report_text)?)
        };
        registry.entries.push(RegistryEntry {
            network,
            config,
            report,
            loss_trace: Vec::new(),
        });
    }
    Ok(registry)
}

/// Writes the registry file.
pub fn save_registry(registry: &ModelRegistry, path: &Path) -> Result<()> {
    fs::write(path, registry_to_bytes(registry))?;
    Ok(())
}

/// Reads a registry file, reporting version mismatches, truncation, and
/// checksum failures distinctly.
pub fn load_registry(path: &Path) -> Result<ModelRegistry> {
    let bytes = fs::read(path)?;
    registry_from_bytes(&bytes)
}

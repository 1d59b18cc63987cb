//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header   "FFFK" | version u32 | dataset u8 | variant u8 | flags u16
//!          | depth u32 | leaf_width u32 | master_width u32
//!          | input_dim u32 | class_count u32
//! section* tag u32 | count u64 | payload
//! trailer  SHA-256 of every preceding byte (32 bytes)
//! ```
//!
//! Sections appear in this order: one node section (`nodes * (input_dim + 1)`
//! f32, each node's weights followed by its bias), one leaf section per leaf
//! (`w1, b1, w2, b2` as f32), a master section (its block followed by kappa)
//! when flag bit 0 is set, and an optimizer section when flag bit 1 is set.
//! A vanilla baseline has depth 0, its width in `leaf_width`, and a single
//! leaf section. `count` is the number of f32 values, except for the
//! optimizer section where it is a byte length.

use std::fs;
use std::path::Path;

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::DatasetKind;
use crate::model::{Classifier, FffModel, LeafBlock, MasterLeaf, Parameters};
use crate::numeric::Tensor2;
use crate::optim::{AdamConfig, AdamState};
use crate::trainer::Variant;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFFK";
pub const FORMAT_VERSION: u32 = 1;
pub const FLAG_MASTER: u16 = 1;
pub const FLAG_OPTIMIZER: u16 = 2;

const TAG_NODES: u32 = 1;
const TAG_LEAF: u32 = 2;
const TAG_MASTER: u32 = 3;
const TAG_OPTIMIZER: u32 = 4;
const HEADER_LEN: usize = 4 + 4 + 1 + 1 + 2 + 5 * 4;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dataset: Option<DatasetKind>,
    pub variant: Variant,
    pub model: Classifier<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

fn check_variant(variant: Variant, model: &Classifier<f32>) -> Result<()> {
    let ok = match model {
        Classifier::Vanilla(_) => variant == Variant::VanillaFf,
        Classifier::Fff(m) => variant.is_fff() && variant.has_master() == m.master().is_some(),
    };
    if !ok {
        return Err(Error::Checkpoint(format!("variant {variant} does not describe this model")));
    }
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn leaf_floats(l: &LeafBlock<f32>) -> Vec<f32> {
    let mut v = Vec::with_capacity(l.w1().as_slice().len() + l.w2().as_slice().len() + l.width() + l.class_count());
    l.visit(&mut |_, s| v.extend_from_slice(s));
    v
}

fn put_section(out: &mut Vec<u8>, tag: u32, floats: &[f32]) {
    put_u32(out, tag);
    out.extend_from_slice(&(floats.len() as u64).to_le_bytes());
    put_f32s(out, floats);
}

fn optimizer_bytes(adam: &AdamState<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&adam.step_count().to_le_bytes());
    for v in [adam.lr, adam.config.beta1, adam.config.beta2, adam.config.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut out, adam.first_moments().len() as u32);
    for m in adam.first_moments() {
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    }
    for set in [adam.first_moments(), adam.second_moments()] {
        for m in set {
            put_f32s(&mut out, m);
        }
    }
    out
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    check_variant(ck.variant, &ck.model)?;
    if let Some(adam) = &ck.optimizer {
        if !adam.matches(&ck.model) {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    out.push(ck.dataset.map_or(0, DatasetKind::tag));
    out.push(ck.variant.tag());
    let (depth, width, master, input, classes) = match &ck.model {
        Classifier::Vanilla(l) => (0, l.width(), 0, l.input_dim(), l.class_count()),
        Classifier::Fff(m) => (
            m.depth(),
            m.leaf_width(),
            m.master().map_or(0, |ml| ml.block.width()),
            m.input_dim(),
            m.class_count(),
        ),
    };
    let mut flags = 0u16;
    if master > 0 {
        flags |= FLAG_MASTER;
    }
    if ck.optimizer.is_some() {
        flags |= FLAG_OPTIMIZER;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    for v in [depth, width, master, input, classes] {
        put_u32(&mut out, v as u32);
    }
    match &ck.model {
        Classifier::Vanilla(l) => put_section(&mut out, TAG_LEAF, &leaf_floats(l)),
        Classifier::Fff(m) => {
            let mut nodes = Vec::with_capacity(m.node_count() * (input + 1));
            for j in 0..m.node_count() {
                let unit = m.node(j);
                nodes.extend_from_slice(unit.weight);
                nodes.push(unit.bias);
            }
            put_section(&mut out, TAG_NODES, &nodes);
            for l in m.leaves() {
                put_section(&mut out, TAG_LEAF, &leaf_floats(l));
            }
            if let Some(ml) = m.master() {
                let mut v = leaf_floats(&ml.block);
                v.push(ml.kappa);
                put_section(&mut out, TAG_MASTER, &v);
            }
        }
    }
    if let Some(adam) = &ck.optimizer {
        let bytes = optimizer_bytes(adam);
        put_u32(&mut out, TAG_OPTIMIZER);
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("section too large".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn section(&mut self, tag: u32, expected: usize) -> Result<Vec<f32>> {
        let got_tag = self.u32()?;
        if got_tag != tag {
            return Err(Error::Checkpoint(format!("expected section {tag}, found {got_tag}")));
        }
        let count = self.u64()? as usize;
        if count != expected {
            return Err(Error::Checkpoint(format!(
                "section {tag} holds {count} values, header implies {expected}"
            )));
        }
        self.f32s(count)
    }
}

fn leaf_from(v: &[f32], input: usize, width: usize, classes: usize) -> Result<LeafBlock<f32>> {
    let (a, rest) = v.split_at(width * input);
    let (b1, rest) = rest.split_at(width);
    let (w2, b2) = rest.split_at(classes * width);
    LeafBlock::from_parts(
        Tensor2::from_vec(width, input, a.to_vec())?,
        b1.to_vec(),
        Tensor2::from_vec(classes, width, w2.to_vec())?,
        b2.to_vec(),
    )
}

fn leaf_len(input: usize, width: usize, classes: usize) -> usize {
    width * input + width + classes * width + classes
}

fn dims_err(e: Error) -> Error {
    match e {
        Error::Checkpoint(_) => e,
        other => Error::Checkpoint(format!("inconsistent dimensions: {other}")),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Checkpoint(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let dataset_tag = r.u8()?;
    let dataset = match dataset_tag {
        0 => None,
        t => Some(DatasetKind::from_tag(t).ok_or_else(|| Error::Checkpoint(format!("unknown dataset tag {t}")))?),
    };
    let vtag = r.u8()?;
    let variant = Variant::from_tag(vtag).ok_or_else(|| Error::Checkpoint(format!("unknown variant tag {vtag}")))?;
    let flags = r.u16()?;
    let depth = r.u32()? as usize;
    let width = r.u32()? as usize;
    let master_width = r.u32()? as usize;
    let input = r.u32()? as usize;
    let classes = r.u32()? as usize;
    if depth > 20 || width == 0 || input == 0 || classes == 0 {
        return Err(Error::Checkpoint(format!(
            "implausible header: depth {depth}, width {width}, input {input}, classes {classes}"
        )));
    }
    if (flags & FLAG_MASTER != 0) != (master_width > 0) {
        return Err(Error::Checkpoint("master flag disagrees with master width".into()));
    }

    let model = if depth == 0 {
        let v = r.section(TAG_LEAF, leaf_len(input, width, classes))?;
        Classifier::Vanilla(leaf_from(&v, input, width, classes).map_err(dims_err)?)
    } else {
        let nodes = (1usize << depth) - 1;
        let v = r.section(TAG_NODES, nodes * (input + 1))?;
        let mut w = Vec::with_capacity(nodes * input);
        let mut b = Vec::with_capacity(nodes);
        for row in v.chunks_exact(input + 1) {
            w.extend_from_slice(&row[..input]);
            b.push(row[input]);
        }
        let node_w = Tensor2::from_vec(nodes, input, w)?;
        let leaves = (0..=nodes)
            .map(|_| {
                let v = r.section(TAG_LEAF, leaf_len(input, width, classes))?;
                leaf_from(&v, input, width, classes).map_err(dims_err)
            })
            .collect::<Result<Vec<_>>>()?;
        let master = if master_width > 0 {
            let v = r.section(TAG_MASTER, leaf_len(input, master_width, classes) + 1)?;
            let (block, kappa) = v.split_at(v.len() - 1);
            Some(MasterLeaf {
                block: leaf_from(block, input, master_width, classes).map_err(dims_err)?,
                kappa: kappa[0],
            })
        } else {
            None
        };
        Classifier::Fff(FffModel::from_parts(depth, node_w, b, leaves, master).map_err(dims_err)?)
    };
    check_variant(variant, &model)?;

    let optimizer = if flags & FLAG_OPTIMIZER != 0 {
        let tag = r.u32()?;
        if tag != TAG_OPTIMIZER {
            return Err(Error::Checkpoint(format!("expected optimizer section, found {tag}")));
        }
        let len = r.u64()? as usize;
        let start = r.pos;
        let step = r.u64()?;
        let lr = r.f64()?;
        let config = AdamConfig {
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let tensors = r.u32()? as usize;
        let lens = (0..tensors).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let mut read_set = || lens.iter().map(|n| r.f32s(*n)).collect::<Result<Vec<_>>>();
        let m = read_set()?;
        let v = read_set()?;
        if r.pos - start != len {
            return Err(Error::Checkpoint("optimizer section length mismatch".into()));
        }
        let adam = AdamState::from_parts(lr, config, step, m, v)?;
        if !adam.matches(&model) {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        Some(adam)
    } else {
        None
    };
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        dataset,
        variant,
        model,
        optimizer,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = encode(ck)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Human-readable dump; decimal rendering is lossy and not meant for reloading.
pub fn export_json(ck: &Checkpoint) -> serde_json::Value {
    let leaf = |l: &LeafBlock<f32>| {
        json!({
            "w1": l.w1().as_slice().chunks(l.input_dim()).collect::<Vec<_>>(),
            "b1": l.b1(),
            "w2": l.w2().as_slice().chunks(l.width()).collect::<Vec<_>>(),
            "b2": l.b2(),
        })
    };
    let model = match &ck.model {
        Classifier::Vanilla(l) => json!({ "kind": "vanilla", "width": l.width(), "block": leaf(l) }),
        Classifier::Fff(m) => json!({
            "kind": "fff",
            "depth": m.depth(),
            "leaf_width": m.leaf_width(),
            "nodes": (0..m.node_count()).map(|j| {
                let n = m.node(j);
                json!({ "weight": n.weight, "bias": n.bias })
            }).collect::<Vec<_>>(),
            "leaves": m.leaves().iter().map(leaf).collect::<Vec<_>>(),
            "master": m.master().map(|ml| json!({
                "kappa": ml.kappa,
                "k": ml.k(),
                "block": leaf(&ml.block),
            })),
        }),
    };
    json!({
        "format_version": FORMAT_VERSION,
        "dataset": ck.dataset.map(|d| d.name()),
        "variant": ck.variant.name(),
        "input_dim": ck.model.input_dim(),
        "class_count": ck.model.class_count(),
        "optimizer_steps": ck.optimizer.as_ref().map(|a| a.step_count()),
        "model": model,
    })
}

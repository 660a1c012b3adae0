//! Parameterized layers built from the autodiff primitives, plus the binary
//! parameter checkpoint format.
//!
//! Parameters live in a flat [`LayerParams`] map keyed by dotted paths such as
//! `stage1.conv1.weight`. Before a forward pass the map is bound onto a tape
//! with [`LayerParams::bind`], which records every tensor as a leaf.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    map: BTreeMap<String, Tensor>,
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) -> Result<()> {
        let path = path.into();
        if self.map.contains_key(&path) {
            return Err(Error::Key(format!("duplicate parameter path {path}")));
        }
        self.map.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.map
            .get(path)
            .ok_or_else(|| Error::Key(format!("missing parameter {path}")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.map
            .get_mut(path)
            .ok_or_else(|| Error::Key(format!("missing parameter {path}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Writes the binary checkpoint container.
    ///
    /// Layout (little endian): magic `DGPARAMS`, u32 version, u32 entry count,
    /// then per entry u32 path length, UTF-8 path, u32 rank, u64 dims, f64 data.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.map.len() as u32).to_le_bytes())?;
        for (path, t) in &self.map {
            w.write_all(&(path.len() as u32).to_le_bytes())?;
            w.write_all(path.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut params = Self::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut path = vec![0u8; len];
            r.read_exact(&mut path)?;
            let path = String::from_utf8(path)
                .map_err(|_| Error::Checkpoint("parameter path is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            params.insert(path, Tensor::new(shape, data)?)?;
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"DGPARAMS";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Parameters recorded on a tape for one forward pass.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    /// Binds already-recorded vars under the given paths.
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var<'t>)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, path: &str) -> Result<Var<'t>> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::Key(format!("missing parameter {path}")))
    }

    /// Collects gradients for every bound parameter, zero-filled where the
    /// loss does not reach a parameter.
    pub fn gradients(&self, grads: &Gradients) -> Result<LayerParams> {
        let mut out = LayerParams::new();
        for (k, v) in &self.vars {
            let g = match grads.wrt(*v)? {
                Some(g) => g.clone(),
                None => Tensor::zeros(v.shape()),
            };
            out.insert(k.clone(), g)?;
        }
        Ok(out)
    }

    /// Paths of bound parameters the loss never reached.
    pub fn unreached(&self, grads: &Gradients) -> Result<Vec<String>> {
        let mut missing = Vec::new();
        for (k, v) in &self.vars {
            if grads.wrt(*v)?.is_none() {
                missing.push(k.clone());
            }
        }
        Ok(missing)
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
}

/// He-uniform conv weights (O, C, K, K) and zero bias.
pub fn init_conv(
    params: &mut LayerParams,
    prefix: &str,
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let fan_in = (in_ch * kernel * kernel) as f64;
    let bound = (6.0 / fan_in).sqrt();
    params.insert(
        join(prefix, "weight"),
        uniform(rng, &[out_ch, in_ch, kernel, kernel], bound),
    )?;
    params.insert(join(prefix, "bias"), Tensor::zeros([out_ch]))
}

/// He-uniform weights (D_in, D_out) and zero bias.
pub fn init_linear(
    params: &mut LayerParams,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = (6.0 / d_in as f64).sqrt();
    params.insert(join(prefix, "weight"), uniform(rng, &[d_in, d_out], bound))?;
    params.insert(join(prefix, "bias"), Tensor::zeros([d_out]))
}

/// U(-1/sqrt(H), 1/sqrt(H)) weights; bias zero except +1 on the forget gate.
pub fn init_lstm(
    params: &mut LayerParams,
    prefix: &str,
    d_in: usize,
    hidden: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let bound = 1.0 / (hidden as f64).sqrt();
    params.insert(join(prefix, "w_ih"), uniform(rng, &[d_in, 4 * hidden], bound))?;
    params.insert(join(prefix, "w_hh"), uniform(rng, &[hidden, 4 * hidden], bound))?;
    let bias = Tensor::from_fn([4 * hidden], |i| {
        if (hidden..2 * hidden).contains(&i) {
            1.0
        } else {
            0.0
        }
    });
    params.insert(join(prefix, "bias"), bias)
}

/// Convolution followed by its per-channel bias.
pub fn conv<'t>(
    x: Var<'t>,
    p: &BoundParams<'t>,
    prefix: &str,
    stride: usize,
    padding: usize,
) -> Result<Var<'t>> {
    x.conv2d(p.get(&join(prefix, "weight"))?, stride, padding)?
        .add_bias(p.get(&join(prefix, "bias"))?)
}

/// `x W + b` for x of shape (B, D_in).
pub fn fully_connected<'t>(x: Var<'t>, p: &BoundParams<'t>, prefix: &str) -> Result<Var<'t>> {
    x.matmul(p.get(&join(prefix, "weight"))?)?
        .add_bias(p.get(&join(prefix, "bias"))?)
}

/// Adds the parameters of one residual block to `params`.
pub fn init_residual_block(
    params: &mut LayerParams,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    init_conv(params, &join(prefix, "conv1"), out_ch, in_ch, 3, rng)?;
    init_conv(params, &join(prefix, "conv2"), out_ch, out_ch, 3, rng)?;
    if in_ch != out_ch || stride != 1 {
        init_conv(params, &join(prefix, "proj"), out_ch, in_ch, 1, rng)?;
    }
    Ok(())
}

/// `relu(conv2(relu(conv1(x))) + shortcut(x))` with two 3x3 convolutions.
///
/// The shortcut is the identity unless a `proj` 1x1 convolution is present.
pub fn residual_block<'t>(
    x: Var<'t>,
    p: &BoundParams<'t>,
    prefix: &str,
    stride: usize,
) -> Result<Var<'t>> {
    let h = conv(x, p, &join(prefix, "conv1"), stride, 1)?.relu();
    let h = conv(h, p, &join(prefix, "conv2"), 1, 1)?;
    let proj = join(prefix, "proj");
    let shortcut = if p.vars.contains_key(&join(&proj, "weight")) {
        conv(x, p, &proj, stride, 0)?
    } else {
        x
    };
    let (hs, ss) = (h.shape(), shortcut.shape());
    if hs != ss {
        return Err(Error::Shape {
            op: "residual_block",
            lhs: hs,
            rhs: ss,
        });
    }
    Ok(h.add(shortcut)?.relu())
}

/// Hidden and cell state, both (B, H).
#[derive(Clone, Copy, Debug)]
pub struct LstmState<'t> {
    pub h: Var<'t>,
    pub c: Var<'t>,
}

impl<'t> LstmState<'t> {
    pub fn zeros(tape: &'t Tape, batch: usize, hidden: usize) -> Self {
        Self {
            h: tape.leaf(Tensor::zeros([batch, hidden])),
            c: tape.leaf(Tensor::zeros([batch, hidden])),
        }
    }
}

/// One LSTM step. Gate blocks are laid out as (input, forget, candidate, output):
/// `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_cell<'t>(
    x: Var<'t>,
    state: LstmState<'t>,
    p: &BoundParams<'t>,
    prefix: &str,
) -> Result<(Var<'t>, LstmState<'t>)> {
    let w_hh = p.get(&join(prefix, "w_hh"))?;
    let hidden = w_hh.shape()[0];
    let (hs, cs) = (state.h.shape(), state.c.shape());
    let batch = x.shape()[0];
    if hs != cs || hs != [batch, hidden] {
        return Err(Error::Shape {
            op: "lstm_cell state",
            lhs: hs,
            rhs: vec![batch, hidden],
        });
    }
    let gates = x
        .matmul(p.get(&join(prefix, "w_ih"))?)?
        .add(state.h.matmul(w_hh)?)?
        .add_bias(p.get(&join(prefix, "bias"))?)?;
    let i = gates.slice(1, 0, hidden)?.sigmoid();
    let f = gates.slice(1, hidden, hidden)?.sigmoid();
    let g = gates.slice(1, 2 * hidden, hidden)?.tanh();
    let o = gates.slice(1, 3 * hidden, hidden)?.sigmoid();
    let c = f.mul(state.c)?.add(i.mul(g)?)?;
    let h = o.mul(c.tanh())?;
    Ok((h, LstmState { h, c }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_paths_are_rejected() {
        let mut p = LayerParams::new();
        p.insert("a", Tensor::zeros([1])).unwrap();
        assert!(matches!(p.insert("a", Tensor::zeros([1])), Err(Error::Key(_))));
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut p = LayerParams::new();
        init_lstm(&mut p, "l", 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(
            p.get("l.bias").unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert!(p.get("l.w_ih").unwrap().data().iter().all(|v| v.abs() <= 1.0 / 2f64.sqrt()));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(LayerParams::read_from(&b"NOTPARAM\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        LayerParams::new().write_to(&mut buf).unwrap();
        buf[8] = 9;
        assert!(matches!(LayerParams::read_from(&buf[..]), Err(Error::Checkpoint(_))));
    }
}

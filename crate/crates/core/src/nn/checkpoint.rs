//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "CSNN"
//! version      u32      1
//! seed         u64      initialization seed of the net
//! input_dim    u32
//! n_layers     u32
//! per layer    u32 outputs, u8 activation tag (0 linear, 1 relu, 2 tanh, 3 silu)
//! n_params     u64
//! params       n_params x f64, layer by layer: weights row-major (inputs x outputs), then bias
//! has_optim    u8       0 or 1
//! [if 1]       u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
//!              n_params x f64 first moments, n_params x f64 second moments
//! ```

use std::io::{Read, Write};

use super::{Activation, Adam, DenseNet, Layer, Matrix};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSNN";
const VERSION: u32 = 1;

/// A network plus, optionally, the optimizer state needed to resume training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: DenseNet,
    pub optimizer: Option<Adam>,
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &DenseNet, optimizer: Option<&Adam>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&net.seed().to_le_bytes())?;
    w.write_all(&(net.input_dim() as u32).to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for l in net.layers() {
        w.write_all(&(l.outputs() as u32).to_le_bytes())?;
        w.write_all(&[l.activation.tag()])?;
    }
    let params = net.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    write_f64s(&mut w, &params)?;
    match optimizer {
        Some(opt) => {
            w.write_all(&[1])?;
            w.write_all(&opt.step_count().to_le_bytes())?;
            for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                w.write_all(&v.to_le_bytes())?;
            }
            let (m, v) = opt.moments();
            write_f64s(&mut w, m)?;
            write_f64s(&mut w, v)?;
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let seed = read_u64(&mut r)?;
    let input_dim = read_u32(&mut r)? as usize;
    let n_layers = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let outputs = read_u32(&mut r)? as usize;
        let mut tag = [0u8];
        r.read_exact(&mut tag)?;
        let act = Activation::from_tag(tag[0])
            .ok_or_else(|| Error::Format(format!("unknown activation tag {}", tag[0])))?;
        shapes.push((outputs, act));
    }
    let n_params = read_u64(&mut r)? as usize;
    let expected: usize = shapes
        .iter()
        .scan(input_dim, |fan_in, &(out, _)| {
            let n = *fan_in * out + out;
            *fan_in = out;
            Some(n)
        })
        .sum();
    if n_params != expected {
        return Err(Error::Format(format!("parameter count {n_params} does not match layer dims ({expected})")));
    }
    let params = read_f64s(&mut r, n_params)?;
    let mut layers = Vec::with_capacity(n_layers);
    let mut off = 0;
    let mut fan_in = input_dim;
    for (out, act) in shapes {
        let w = params[off..off + fan_in * out].to_vec();
        off += fan_in * out;
        let b = params[off..off + out].to_vec();
        off += out;
        layers.push(Layer { weights: Matrix::from_vec(fan_in, out, w)?, bias: b, activation: act });
        fan_in = out;
    }
    let net = DenseNet::from_layers(input_dim, layers, seed)?;
    let mut flag = [0u8];
    r.read_exact(&mut flag)?;
    let optimizer = match flag[0] {
        0 => None,
        1 => {
            let step = read_u64(&mut r)?;
            let lr = read_f64(&mut r)?;
            let mut opt = Adam::new(n_params, lr);
            opt.beta1 = read_f64(&mut r)?;
            opt.beta2 = read_f64(&mut r)?;
            opt.eps = read_f64(&mut r)?;
            let m = read_f64s(&mut r, n_params)?;
            let v = read_f64s(&mut r, n_params)?;
            opt.restore(step, m, v)?;
            Some(opt)
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    Ok(Checkpoint { net, optimizer })
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

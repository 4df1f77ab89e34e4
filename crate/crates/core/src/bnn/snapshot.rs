//! Versioned little-endian binary snapshot of a fitted network.
//!
//! ```text
//! magic "AMDFTBNN" | version u32 | kind u8 | kl_weight f64 | input_dim u64
//! | n_layers u64 | layers (tag u8, dims u64...) | n_params u64 | params f64...
//! | n_state u64 | running means f64... | running variances f64...
//! ```

use std::io::{Read, Write};

use super::models::{EnsembleModel, HeadModel};
use super::network::{LayerKind, Network};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"AMDFTBNN";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum BnnSnapshot {
    Head(HeadModel),
    Ensemble(EnsembleModel),
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    put_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(get::<8, _>(r)?))
}

fn get_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = get_u64(r)?;
    if n > (1 << 32) {
        return Err(Error::Schema(format!("snapshot length {n} is implausible")));
    }
    Ok(n as usize)
}

fn get_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = get_len(r)?;
    (0..n).map(|_| Ok(f64::from_le_bytes(get::<8, _>(r)?))).collect()
}

impl BnnSnapshot {
    fn parts(&self) -> (u8, &Network, &[f64], f64) {
        match self {
            BnnSnapshot::Head(m) => (0, &m.net, &m.params, m.kl_weight),
            BnnSnapshot::Ensemble(m) => (1, &m.net, &m.params, m.kl_weight),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (kind, net, params, kl_weight) = self.parts();
        w.write_all(MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&[kind])?;
        w.write_all(&kl_weight.to_le_bytes())?;
        put_u64(&mut w, net.input_dim() as u64)?;
        let kinds = net.kinds();
        put_u64(&mut w, kinds.len() as u64)?;
        for k in kinds {
            match k {
                LayerKind::Dense { inputs, outputs } => {
                    w.write_all(&[0])?;
                    put_u64(&mut w, inputs as u64)?;
                    put_u64(&mut w, outputs as u64)?;
                }
                LayerKind::Variational { inputs, outputs } => {
                    w.write_all(&[1])?;
                    put_u64(&mut w, inputs as u64)?;
                    put_u64(&mut w, outputs as u64)?;
                }
                LayerKind::BatchNorm { dim } => {
                    w.write_all(&[2])?;
                    put_u64(&mut w, dim as u64)?;
                }
                LayerKind::Relu => w.write_all(&[3])?,
                LayerKind::Sigmoid => w.write_all(&[4])?,
            }
        }
        put_f64s(&mut w, params)?;
        let (mean, var) = net.running_stats();
        put_f64s(&mut w, mean)?;
        put_f64s(&mut w, var)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<BnnSnapshot> {
        if &get::<8, _>(&mut r)? != MAGIC {
            return Err(Error::Schema("not a network snapshot (bad magic)".into()));
        }
        let version = u32::from_le_bytes(get::<4, _>(&mut r)?);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Schema(format!("unsupported snapshot version {version}")));
        }
        let [kind] = get::<1, _>(&mut r)?;
        let kl_weight = f64::from_le_bytes(get::<8, _>(&mut r)?);
        let input_dim = get_len(&mut r)?;
        let n_layers = get_len(&mut r)?;
        let mut kinds = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let [tag] = get::<1, _>(&mut r)?;
            kinds.push(match tag {
                0 => LayerKind::Dense {
                    inputs: get_len(&mut r)?,
                    outputs: get_len(&mut r)?,
                },
                1 => LayerKind::Variational {
                    inputs: get_len(&mut r)?,
                    outputs: get_len(&mut r)?,
                },
                2 => LayerKind::BatchNorm { dim: get_len(&mut r)? },
                3 => LayerKind::Relu,
                4 => LayerKind::Sigmoid,
                t => return Err(Error::Schema(format!("unknown layer tag {t} in snapshot"))),
            });
        }
        let mut net = Network::new(input_dim, &kinds)?;
        let params = get_f64s(&mut r)?;
        if params.len() != net.n_params() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: net.n_params(),
            });
        }
        let mean = get_f64s(&mut r)?;
        let var = get_f64s(&mut r)?;
        net.set_running_stats(mean, var)?;
        Ok(match kind {
            0 => BnnSnapshot::Head(HeadModel {
                net,
                params,
                kl_weight,
                trace: Vec::new(),
            }),
            1 => BnnSnapshot::Ensemble(EnsembleModel {
                net,
                params,
                kl_weight,
                posterior_scale: 1.0,
                trace: Vec::new(),
            }),
            k => return Err(Error::Schema(format!("unknown model kind {k} in snapshot"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{ensemble_predict, train_ensemble_model, train_head_model, EnsembleConfig, HeadConfig};
    use crate::data::{encode, generate_synthetic};
    use crate::metrics::ProbabilisticRegressor;

    #[test]
    fn round_trip_preserves_predictions() {
        let data = encode(&generate_synthetic(60, 0.05, 1).unwrap()).unwrap();
        let b = train_ensemble_model(
            &data,
            &EnsembleConfig {
                epochs: 3,
                ..EnsembleConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        BnnSnapshot::Ensemble(b.clone()).write_to(&mut buf).unwrap();
        let BnnSnapshot::Ensemble(back) = BnnSnapshot::read_from(buf.as_slice()).unwrap() else {
            panic!("kind changed")
        };
        assert_eq!(
            ensemble_predict(&b, data.features(), 5, 3).unwrap(),
            ensemble_predict(&back, data.features(), 5, 3).unwrap()
        );

        let a = train_head_model(
            &data,
            &HeadConfig {
                epochs: 3,
                ..HeadConfig::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        BnnSnapshot::Head(a.clone()).write_to(&mut buf).unwrap();
        let BnnSnapshot::Head(back) = BnnSnapshot::read_from(buf.as_slice()).unwrap() else {
            panic!("kind changed")
        };
        assert_eq!(
            a.predict_dist(data.features()).unwrap(),
            back.predict_dist(data.features()).unwrap()
        );
    }

    #[test]
    fn rejects_foreign_bytes() {
        assert!(BnnSnapshot::read_from(&b"NOTABNN!\x01\x00\x00\x00"[..]).is_err());
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&99u32.to_le_bytes());
        assert!(BnnSnapshot::read_from(buf.as_slice()).is_err());
    }
}

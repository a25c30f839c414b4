use crate::datamodel::{EmbeddingSet, Modality, ModalityMask};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tape, Tensor, Var};
use crate::rng::Rng;

/// Parameter names of one network (`teacher` or `student`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetNames {
    pub prefix: String,
}

impl NetNames {
    pub fn new(prefix: &str) -> Self {
        NetNames {
            prefix: prefix.to_string(),
        }
    }

    pub fn modality(&self, m: Modality) -> String {
        format!("{}.gmu.w.{}", self.prefix, m.short())
    }

    pub fn gate(&self) -> String {
        format!("{}.gmu.gate", self.prefix)
    }

    pub fn head_weight(&self) -> String {
        format!("{}.head.weight", self.prefix)
    }

    pub fn head_bias(&self) -> String {
        format!("{}.head.bias", self.prefix)
    }

    /// Initializes the fusion unit (`fused x dim` projections, a zero gate
    /// matrix) and a zero `clusters x fused` head.
    pub fn init(&self, store: &mut ParamStore, dim: usize, fused: usize, clusters: usize, rng: &mut Rng) -> Result<()> {
        for m in Modality::ALL {
            store.insert(self.modality(m), Tensor::xavier(fused, dim, rng))?;
        }
        store.insert(self.gate(), Tensor::zeros(&[4, 4 * dim]))?;
        store.insert(self.head_weight(), Tensor::zeros(&[clusters, fused]))?;
        store.insert(self.head_bias(), Tensor::zeros(&[1, clusters]))?;
        Ok(())
    }
}

/// Fusion inputs for a batch: one `B x d` block per modality with masked or
/// absent rows set to zero and the others centered and L2-normalized, plus
/// the `B x 4` mask weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GmuBatch {
    pub blocks: [Tensor; 4],
    pub mask: Tensor,
}

impl GmuBatch {
    pub fn len(&self) -> usize {
        self.mask.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-modality offsets subtracted before normalization; an empty vector
/// leaves that modality uncentered.
pub type Centers = [Vec<f64>; 4];

pub fn no_centers() -> Centers {
    Default::default()
}

/// Mean embedding of every modality over the records that carry it.
pub fn modality_means(sets: &[EmbeddingSet], dim: usize) -> Centers {
    std::array::from_fn(|k| {
        let mut sum = vec![0.0; dim];
        let mut n = 0usize;
        for z in sets.iter().filter_map(|s| s.get(Modality::ALL[k])) {
            for (a, v) in sum.iter_mut().zip(z) {
                *a += v;
            }
            n += 1;
        }
        if n == 0 {
            Vec::new()
        } else {
            sum.into_iter().map(|a| a / n as f64).collect()
        }
    })
}

fn normalized(v: &[f64], center: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = if center.is_empty() {
        v.to_vec()
    } else {
        v.iter().zip(center).map(|(x, c)| x - c).collect()
    };
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v
    }
}

/// Builds fusion inputs. Only modalities with positive mask weight are
/// read, so masked slots may hold anything.
pub fn prepare_batch(sets: &[&EmbeddingSet], masks: &[ModalityMask], dim: usize) -> Result<GmuBatch> {
    prepare_centered(sets, masks, dim, &no_centers())
}

pub fn prepare_centered(sets: &[&EmbeddingSet], masks: &[ModalityMask], dim: usize, centers: &Centers) -> Result<GmuBatch> {
    if let Some(c) = centers.iter().find(|c| !c.is_empty() && c.len() != dim) {
        return Err(Error::Dimension(format!("center of width {}, model expects {dim}", c.len())));
    }
    if sets.len() != masks.len() {
        return Err(Error::Dimension(format!("{} embedding sets but {} masks", sets.len(), masks.len())));
    }
    let b = sets.len();
    let mut blocks: [Tensor; 4] = std::array::from_fn(|_| Tensor::zeros(&[b, dim]));
    let mut mask = Tensor::zeros(&[b, 4]);
    for (i, (set, m)) in sets.iter().zip(masks).enumerate() {
        for modality in Modality::ALL {
            let k = modality.index();
            let w = m.weight(modality);
            mask.set(i, k, w);
            if w == 0.0 {
                continue;
            }
            let z = set.get(modality).ok_or_else(|| {
                Error::Validation(format!("modality {} is unmasked but has no embedding", modality.short()))
            })?;
            if z.len() != dim {
                return Err(Error::Dimension(format!(
                    "{} embedding of width {}, model expects {dim}",
                    modality.short(),
                    z.len()
                )));
            }
            for (c, v) in normalized(z, &centers[k]).into_iter().enumerate() {
                blocks[k].set(i, c, v);
            }
        }
    }
    Ok(GmuBatch { blocks, mask })
}

/// Fused representations `B x fused` and modality weights `B x 4`.
///
/// Logits are `[z_s; z_t; z_p; z_u] W_gate^T`, multiplied by the mask
/// weights and softmaxed over the unmasked entries only.
pub fn gmu_forward_tape(tape: &mut Tape, store: &ParamStore, names: &NetNames, batch: &GmuBatch) -> Result<(Var, Var)> {
    let support = batch.mask.map(|w| if w > 0.0 { 1.0 } else { 0.0 });
    if let Some(r) = (0..support.rows()).find(|&r| support.row_slice(r).iter().all(|&s| s == 0.0)) {
        return Err(Error::InvalidMask(format!("row {r} masks every modality")));
    }
    let xs: Vec<Var> = batch.blocks.iter().map(|t| tape.constant(t.clone())).collect();
    let mut hidden = Vec::with_capacity(4);
    for m in Modality::ALL {
        let w = tape.param(store, &names.modality(m))?;
        let h = tape.matmul_nt(xs[m.index()], w);
        hidden.push(tape.tanh(h));
    }
    let cat = tape.concat_cols(&xs);
    let gate = tape.param(store, &names.gate())?;
    let logits = tape.matmul_nt(cat, gate);
    let mask = tape.constant(batch.mask.clone());
    let scaled = tape.mul(logits, mask);
    let weights = tape.masked_softmax_rows(scaled, &support);
    let mut z: Option<Var> = None;
    for (k, h) in hidden.into_iter().enumerate() {
        let wk = tape.slice_cols(weights, k, k + 1);
        let term = tape.mul_col(h, wk);
        z = Some(match z {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    Ok((z.expect("four modalities"), weights))
}

/// Cluster logits `z W^T + b`.
pub fn head_logits(tape: &mut Tape, store: &ParamStore, names: &NetNames, z: Var) -> Result<Var> {
    let w = tape.param(store, &names.head_weight())?;
    let b = tape.param(store, &names.head_bias())?;
    let y = tape.matmul_nt(z, w);
    Ok(tape.add_row(y, b))
}

/// Fused vector and modality weights of a single record.
pub fn gmu_forward(set: &EmbeddingSet, mask: &ModalityMask, store: &ParamStore, names: &NetNames) -> Result<(Vec<f64>, [f64; 4])> {
    let dim = store.get(&names.modality(Modality::Source))?.cols();
    let batch = prepare_batch(&[set], std::slice::from_ref(mask), dim)?;
    let mut tape = Tape::new();
    let (z, w) = gmu_forward_tape(&mut tape, store, names, &batch)?;
    let wv = tape.value(w);
    Ok((tape.value(z).row_vec(0), [wv.at(0, 0), wv.at(0, 1), wv.at(0, 2), wv.at(0, 3)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn store(dim: usize, seed: u64) -> (ParamStore, NetNames) {
        let names = NetNames::new("student");
        let mut s = ParamStore::new();
        let mut rng = seeded(seed);
        names.init(&mut s, dim, 3, 2, &mut rng).unwrap();
        *s.get_mut(&names.gate()).unwrap() = Tensor::uniform(&[4, 4 * dim], 0.5, &mut rng);
        *s.get_mut(&names.head_weight()).unwrap() = Tensor::xavier(2, 3, &mut rng);
        (s, names)
    }

    fn set(dim: usize, seed: u64) -> EmbeddingSet {
        let mut rng = seeded(seed);
        let v = |rng: &mut crate::rng::Rng| Tensor::uniform(&[1, dim], 1.0, rng).row_vec(0);
        EmbeddingSet::full(v(&mut rng), v(&mut rng), v(&mut rng), v(&mut rng)).unwrap()
    }

    #[test]
    fn equal_logits_split_over_kept_modalities() {
        let names = NetNames::new("t");
        let mut s = ParamStore::new();
        names.init(&mut s, 3, 2, 2, &mut seeded(0)).unwrap();
        let mask = ModalityMask::new([1.0, 1.0, 0.0, 1.0]).unwrap();
        let (_, w) = gmu_forward(&set(3, 1), &mask, &s, &names).unwrap();
        for (k, want) in [1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0].into_iter().enumerate() {
            assert!((w[k] - want).abs() < 1e-15);
        }
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn single_kept_modality_passes_through() {
        let (s, names) = store(3, 2);
        let e = set(3, 3);
        let mask = ModalityMask::new([0.0, 0.0, 1.0, 0.0]).unwrap();
        let (z, w) = gmu_forward(&e, &mask, &s, &names).unwrap();
        assert_eq!(w, [0.0, 0.0, 1.0, 0.0]);
        let x = normalized(e.get(Modality::Propagation).unwrap(), &[]);
        let wp = s.get(&names.modality(Modality::Propagation)).unwrap();
        for (r, zr) in z.iter().enumerate() {
            let h: f64 = wp.row_slice(r).iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((zr - h.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_mask_is_rejected_and_missing_unmasked_modality_is_invalid() {
        let (s, names) = store(3, 2);
        let batch = GmuBatch {
            blocks: std::array::from_fn(|_| Tensor::zeros(&[1, 3])),
            mask: Tensor::zeros(&[1, 4]),
        };
        let mut tape = Tape::new();
        assert!(matches!(gmu_forward_tape(&mut tape, &s, &names, &batch), Err(Error::InvalidMask(_))));
        let partial = EmbeddingSet::new([Some(vec![1.0; 3]), Some(vec![1.0; 3]), None, None]).unwrap();
        let err = gmu_forward(&partial, &ModalityMask::ones(), &s, &names);
        assert!(matches!(err, Err(Error::Validation(_))));
        let early = ModalityMask::new([1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(gmu_forward(&partial, &early, &s, &names).is_ok());
    }

    #[test]
    fn fused_output_gradient() {
        for seed in 0..5 {
            let (s, names) = store(3, seed);
            let sets: Vec<EmbeddingSet> = (0..3).map(|i| set(3, 10 * seed + i)).collect();
            let refs: Vec<&EmbeddingSet> = sets.iter().collect();
            let masks = vec![
                ModalityMask::ones(),
                ModalityMask::new([1.0, 0.5, 0.0, 1.0]).unwrap(),
                ModalityMask::new([0.0, 1.0, 1.0, 0.0]).unwrap(),
            ];
            let batch = prepare_batch(&refs, &masks, 3).unwrap();
            let r = gradcheck::check(&s, &[], 1e-5, |tape, st, _| {
                let (z, _) = gmu_forward_tape(tape, st, &names, &batch)?;
                let y = head_logits(tape, st, &names, z)?;
                let both = tape.concat_cols(&[z, y]);
                Ok(gradcheck::project(tape, both, seed))
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-5, "{}", r.worst);
        }
    }

    proptest! {
        #[test]
        fn masked_slots_cannot_leak(seed in 0u64..10_000, bits in 1u8..16, garbage in -1e6f64..1e6) {
            let (s, names) = store(3, seed % 7);
            let e = set(3, seed);
            let mask = ModalityMask::new(std::array::from_fn(|k| f64::from((bits >> k) & 1))).unwrap();
            let mut z = e.z.clone();
            for m in Modality::ALL {
                if !mask.is_kept(m) {
                    z[m.index()] = Some(vec![garbage, f64::NAN, garbage]);
                }
            }
            let dirty = EmbeddingSet { z };
            let (a, wa) = gmu_forward(&e, &mask, &s, &names).unwrap();
            let (b, wb) = gmu_forward(&dirty, &mask, &s, &names).unwrap();
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(wa, wb);
            prop_assert!((wa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

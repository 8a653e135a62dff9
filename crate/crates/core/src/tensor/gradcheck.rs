use super::{ParamStore, Tape, TensorError, Var};

/// Outcome of comparing tape gradients with central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged by absolute error below this scale.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every trainable parameter value. `loss` must build a scalar on the
/// given tape and be deterministic.
pub fn check_gradients<F, E>(store: &mut ParamStore, step: f64, loss: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        Ok(tape.value(l).item())
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for id in store.trainable_ids() {
        let n = store.value(id).numel();
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig - step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let w = store.add("w", random(&mut rng, &[3, 4]), true);
        let b = store.add("b", random(&mut rng, &[3]), true);
        let x = store.add("x", random(&mut rng, &[5, 4]), true);
        let u = store.add("u", random(&mut rng, &[2, 3]), true);
        let c = store.add("c", random(&mut rng, &[4, 2 * 4]), true);
        let cb = store.add("cb", random(&mut rng, &[4]), true);
        let report = check_gradients(&mut store, 1e-5, |tape| {
            let (wv, bv, xv, uv) = (tape.param(w), tape.param(b), tape.param(x), tape.param(u));
            let (cv, cbv) = (tape.param(c), tape.param(cb));
            let conv = tape.conv1d_same(xv, cv, cbv, 2)?;
            let conv = tape.tanh(conv)?;
            let h = tape.linear(conv, wv, bv)?;
            let h = tape.tanh(h)?;
            let scores = tape.matmul_nt(uv, h)?;
            let a = tape.softmax_rows(scores, None)?;
            let d = tape.matmul(a, h)?;
            let p = tape.rows_dot(d, d)?;
            let p = tape.sigmoid(p)?;
            let r0 = tape.row(h, 0)?;
            let r1 = tape.row(h, 1)?;
            let cat = tape.concat(&[r0, r1])?;
            let s = tape.stack_rows(&[r0, r1])?;
            let m = tape.maxpool_rows(s)?;
            let mv = tape.matmul(m, wv)?;
            let prod = tape.mul(r0, r1)?;
            let diff = tape.sub(prod, r1)?;
            let sm = tape.softmax(diff, None)?;
            let t1 = tape.sum(cat)?;
            let t2 = tape.bce(p, &[1.0, 0.0], &[1.0, 1.0])?;
            let t3 = tape.sum(mv)?;
            let t4 = tape.rows_dot(s, s)?;
            let t4 = tape.sum(t4)?;
            let t5 = tape.row(h, 2).and_then(|r| {
                let q = tape.mul(r, sm)?;
                tape.sum(q)
            })?;
            let total = tape.add(t1, t2)?;
            let total = tape.add(total, t3)?;
            let total = tape.add(total, t4)?;
            tape.add(total, t5)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn gather_gradient_scatters_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let table = store.add("emb", random(&mut rng, &[4, 3]), true);
        let report = check_gradients(&mut store, 1e-5, |tape| {
            let t = tape.param(table);
            let g = tape.gather_rows(t, &[2, 0, 2, 1], Some(&[true, true, true, false]))?;
            let g = tape.tanh(g)?;
            let g = tape.mul(g, g)?;
            tape.sum(g)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.add("w", random(&mut rng, &[6, 6]), true);
        let x = store.add("x", random(&mut rng, &[6]), true);
        let run = || {
            let mut tape = Tape::new(&store);
            let (wv, xv) = (tape.param(w), tape.param(x));
            let mut h = xv;
            for _ in 0..5 {
                let y = tape.matmul(wv, h).unwrap();
                h = tape.tanh(y).unwrap();
            }
            let l = tape.sum(h).unwrap();
            tape.backward(l).unwrap()
        };
        let (a, b) = (run(), run());
        for id in store.ids() {
            let (ga, gb) = (a.get(id).unwrap().data(), b.get(id).unwrap().data());
            assert!(ga.iter().zip(gb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

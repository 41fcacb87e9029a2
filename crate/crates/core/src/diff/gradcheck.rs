use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, coordinate) of the worst mismatch.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn eval<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("non-finite objective {v} during gradient check")));
    }
    Ok(v)
}

/// Compares the tape's gradient of the scalar `f` against five-point central
/// differences with step `h` on every coordinate of every parameter.
pub fn check_gradients<F>(f: F, params: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.scalar(out).is_finite() {
        return Err(Error::Numeric("non-finite objective during gradient check".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.len() {
            let orig = p.data()[ci];
            let mut at = |delta: f64| -> Result<f64> {
                work[pi].data_mut()[ci] = orig + delta;
                let v = eval(&f, &work);
                work[pi].data_mut()[ci] = orig;
                v
            };
            // Fourth-order five-point stencil.
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            let num = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let ana = analytic[pi].data()[ci];
            if !ana.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at param {pi}[{ci}]")));
            }
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ci);
                report.analytic = ana;
                report.numeric = num;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::vector(vec![0.5, -1.25, 2.0]);
        let x = Tensor::vector(vec![1.0, 3.0, -0.5]);
        let r = check_gradients(
            |t, v| {
                let c = t.constant(Tensor::vector(vec![2.0, 1.0, -4.0]));
                let p = t.mul(v[0], c)?;
                let q = t.add(p, v[1])?;
                Ok(t.sum(q))
            },
            &[w, x],
            1e-3,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn softmax_cross_entropy_composite() {
        let logits = Tensor::vector(vec![0.3, -1.2, 2.2, 0.0, 0.7]);
        let r = check_gradients(
            |t, v| {
                let p = t.softmax(v[0], 0)?;
                let lp = t.log(p);
                let picked = t.pick(lp, 3)?;
                let ce = t.cross_entropy(v[0], 2)?;
                let neg = t.scale(picked, -1.0);
                let s = t.add(neg, ce)?;
                Ok(s)
            },
            &[logits],
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let x = Tensor::vector(vec![-1.0]);
        let r = check_gradients(|t, v| { let l = t.log(v[0]); Ok(t.sum(l)) }, &[x], 1e-3);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_primitive_matches_finite_differences(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in 0u64..1000) {
            let a = Tensor::matrix(m, k, lcg(seed, m * k)).unwrap();
            let b = Tensor::matrix(k, n, lcg(seed + 1, k * n)).unwrap();
            let v = Tensor::vector(lcg(seed + 2, k));
            let table = Tensor::matrix(3, n, lcg(seed + 3, 3 * n)).unwrap();
            let r = check_gradients(
                |t, p| {
                    let ab = t.matmul(p[0], p[1])?;           // [m,n]
                    let av = t.matmul(p[0], p[2])?;           // [m]
                    let va = t.matmul(p[2], p[1])?;           // [n]
                    let sm_rows = t.softmax(ab, 1)?;
                    let sm_cols = t.softmax(ab, 0)?;
                    let prod = t.mul(sm_rows, sm_cols)?;
                    let th = t.tanh(av);
                    let sg = t.sigmoid(va);
                    let emb = t.embedding(p[3], &[2, 0, 2])?;
                    let r0 = t.row(emb, 1)?;
                    let mixed = t.add(r0, sg)?;
                    let diff = t.sub(mixed, va)?;
                    let cat = t.concat(&[th, diff])?;
                    let parts = t.split(cat, &[m, n])?;
                    let st = t.stack(&[parts[1], sg])?;
                    let ls = t.log_softmax(parts[0])?;
                    let pos = t.sigmoid(cat);
                    let lg = t.log(pos);
                    let e1 = t.mean(prod);
                    let e2 = t.sum(st);
                    let e3 = t.sum(ls);
                    let e4 = t.mean(lg);
                    let e5 = t.cross_entropy(diff, 0)?;
                    let e6 = t.scale(e5, 0.5);
                    t.add_all(&[e1, e2, e3, e4, e6])
                },
                &[a, b, v, table],
                1e-5,
            ).unwrap();
            prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
        }

        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-30.0f32..30.0, 1..40)) {
            let mut t = Tape::<f32>::new();
            let x = t.constant(Tensor::vector(vals));
            let y = t.softmax(x, 0).unwrap();
            let s: f64 = t.value(y).data().iter().map(|&v| { assert!(v >= 0.0); v as f64 }).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

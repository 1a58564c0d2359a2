//! Fixture generation: a constant form of requested ranks pushed through a
//! random polynomial perturbation of the identity, emitted together with the
//! known flat chart. This is the brute-force roundtrip oracle behind the
//! property suites.

use crate::chart::Chart;
use crate::chartmap::ChartMap;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::forms::{BilinearFormField, ExprMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GenSpec {
    pub seed: u64,
    pub dim: usize,
    pub rank_g: usize,
    pub rank_omega: usize,
    /// Coefficient bound of the polynomial perturbation.
    pub deformation: f64,
}

#[derive(Debug)]
pub struct Generated {
    pub chart: Chart,
    pub form: BilinearFormField,
    /// The constant matrix C realized in the flat chart.
    pub constant: DMatrix<f64>,
    /// Ground-truth forward flat chart x -> y (closed form, polynomial).
    pub flat_map: ChartMap,
    pub flat_exprs: Vec<Expr>,
}

/// Exponent multi-indices with 1 <= |alpha| <= 3.
fn monomials(n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; n];
    fn rec(n: usize, pos: usize, left: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == n {
            if current.iter().sum::<u32>() >= 1 {
                out.push(current.clone());
            }
            return;
        }
        for d in 0..=left {
            current[pos] = d;
            rec(n, pos + 1, left - d, current, out);
        }
        current[pos] = 0;
    }
    rec(n, 0, 3, &mut current, &mut out);
    out
}

fn monomial_expr(alpha: &[u32]) -> Expr {
    let mut factors = Vec::new();
    for (i, &d) in alpha.iter().enumerate() {
        if d > 0 {
            factors.push(Expr::int_pow(Expr::var(i), d as i32));
        }
    }
    Expr::product(factors)
}

/// Decimal rational with 12 fractional digits, so generated coefficients
/// print exactly and the emitted problem file reproduces the fixture.
fn coefficient_expr(value: f64) -> Expr {
    let scaled = (value * 1e12).round() as i64;
    Expr::mul(Expr::integer(scaled), Expr::rational(1, 1_000_000_000_000))
}

pub fn generate(spec: &GenSpec, config: &Config) -> Result<Generated> {
    let n = spec.dim;
    if n == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if spec.rank_g > n || spec.rank_omega > n {
        return Err(Error::InvalidInput("requested rank exceeds the dimension".into()));
    }
    if spec.rank_omega % 2 != 0 {
        return Err(Error::InvalidInput("rank of the skew part must be even".into()));
    }
    if !(0.0..=0.5).contains(&spec.deformation) {
        return Err(Error::InvalidInput(
            "deformation must lie in [0, 0.5]".into(),
        ));
    }

    let chart = Chart::synthetic("x", vec![(-0.5, 0.5); n], vec![0.0; n])?;
    let flat_chart = Chart::synthetic("y", vec![(-1.0, 1.0); n], vec![0.0; n])?;

    // constant form: rank_g ones on the diagonal, skew pairs on adjacent
    // coordinates
    let mut c = DMatrix::zeros(n, n);
    for i in 0..spec.rank_g {
        c[(i, i)] = 1.0;
    }
    for p in 0..spec.rank_omega / 2 {
        c[(2 * p, 2 * p + 1)] += 1.0;
        c[(2 * p + 1, 2 * p)] += -1.0;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let alphas = monomials(n);
    let include_prob = (3.0 / alphas.len() as f64).min(1.0);

    for _attempt in 0..100 {
        // psi_i = x_i + sum_alpha a_alpha x^alpha
        let mut exprs: Vec<Expr> = Vec::with_capacity(n);
        for i in 0..n {
            let mut terms = vec![Expr::var(i)];
            for alpha in &alphas {
                if rng.random::<f64>() < include_prob {
                    let coef = spec.deformation * (2.0 * rng.random::<f64>() - 1.0);
                    if coef != 0.0 {
                        terms.push(Expr::mul(coefficient_expr(coef), monomial_expr(alpha)));
                    }
                }
            }
            exprs.push(Expr::sum(terms));
        }
        let map = ChartMap::closed_form(chart.clone(), flat_chart.clone(), exprs.clone())?;
        let cert = map.invertibility_certificate(5)?;
        if cert.min_abs_det < 0.2 {
            continue;
        }

        // B = J^T C J symbolically
        let jac: Vec<Vec<Expr>> = exprs
            .iter()
            .map(|e| (0..n).map(|k| e.differentiate(k)).collect())
            .collect();
        let entries = ExprMatrix::from_fn(n, |i, j| {
            let mut terms = Vec::new();
            for r in 0..n {
                for s in 0..n {
                    if c[(r, s)] != 0.0 {
                        terms.push(Expr::product(vec![
                            constant_to_expr(c[(r, s)]),
                            jac[r][i].clone(),
                            jac[s][j].clone(),
                        ]));
                    }
                }
            }
            Expr::sum(terms)
        });
        let form = BilinearFormField::new(chart.clone(), entries)?;
        let _ = config;
        return Ok(Generated {
            chart,
            form,
            constant: c,
            flat_map: map,
            flat_exprs: exprs,
        });
    }
    Err(Error::Construction(
        "generated map not invertible on the box after 100 retries".into(),
    ))
}

fn constant_to_expr(v: f64) -> Expr {
    // the constant matrix entries are small integers by construction
    Expr::integer(v as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chartmap::pullback_at;
    use crate::forms::ConstantMatrixField;

    #[test]
    fn zero_deformation_reproduces_the_constant_form() {
        let spec = GenSpec {
            seed: 5,
            dim: 3,
            rank_g: 2,
            rank_omega: 2,
            deformation: 0.0,
        };
        let generated = generate(&spec, &Config::default()).unwrap();
        for p in generated.chart.grid(3).points() {
            let b = generated.form.entries().eval(&p).unwrap();
            assert!((b - &generated.constant).abs().max() < 1e-15);
        }
    }

    #[test]
    fn pullback_through_ground_truth_is_constant() {
        let spec = GenSpec {
            seed: 42,
            dim: 3,
            rank_g: 1,
            rank_omega: 2,
            deformation: 0.2,
        };
        let generated = generate(&spec, &Config::default()).unwrap();
        // components in the flat coordinates: K^T B K with K = J_psi^{-1}
        for p in generated.chart.grid(3).points() {
            let got = crate::chartmap::components_via_forward(
                &ConstantMatrixField(generated.form.entries().eval(&p).unwrap()),
                &generated.flat_map,
                &p,
            )
            .unwrap();
            assert!(
                (got - &generated.constant).abs().max() < 1e-10,
                "ground truth chart does not flatten the generated form"
            );
        }
    }

    #[test]
    fn determinism_per_seed() {
        let spec = GenSpec {
            seed: 7,
            dim: 2,
            rank_g: 2,
            rank_omega: 2,
            deformation: 0.1,
        };
        let a = generate(&spec, &Config::default()).unwrap();
        let b = generate(&spec, &Config::default()).unwrap();
        let names = a.chart.names();
        for (ea, eb) in a.flat_exprs.iter().zip(&b.flat_exprs) {
            assert_eq!(ea.to_text(names), eb.to_text(names));
        }
    }

    #[test]
    fn odd_skew_rank_rejected() {
        let spec = GenSpec {
            seed: 1,
            dim: 3,
            rank_g: 0,
            rank_omega: 1,
            deformation: 0.1,
        };
        assert!(generate(&spec, &Config::default()).is_err());
    }

    #[test]
    fn roundtrip_constant_through_pullback_and_inverse() {
        // pull the constant through the ground-truth map, then back through
        // its numeric inverse
        let spec = GenSpec {
            seed: 11,
            dim: 2,
            rank_g: 2,
            rank_omega: 0,
            deformation: 0.15,
        };
        let generated = generate(&spec, &Config::default()).unwrap();
        let inv = generated.flat_map.inverse();
        let b_entries = generated.form.entries().clone();
        let pulled = crate::forms::ClosureMatrixField {
            n: 2,
            f: move |x: &[f64]| b_entries.eval(x),
        };
        for y in [[0.1, 0.05], [-0.2, 0.1], [0.0, 0.0]] {
            let got = pullback_at(&pulled, &inv, &y).unwrap();
            assert!(
                (got - &generated.constant).abs().max() < 1e-6,
                "roundtrip through the numeric inverse failed"
            );
        }
    }
}

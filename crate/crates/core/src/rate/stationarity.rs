//! Residuals of the marginal constraint on an occupation measure `μ` over
//! the joint noise space, under the frozen product kernel `P = ρ¹_x ⊗ ρ²`.
//!
//! Two readings are reported side by side and never merged:
//! `standard = ‖μ − μP‖₁` (invariance of `μ`) and
//! `harmonic = ‖μ − Pμ‖₁`, with `P` acting on `μ` as a function,
//! `(Pμ)(z1,z2) = Σ ρ¹_x(z1,z3) ρ²(z2,z4) μ(z3,z4)`.

use crate::markov::ProbVector;
use crate::sa::GeneralSA;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityResidual {
    pub standard: f64,
    pub harmonic: f64,
}

pub fn stationarity_residual(sa: &GeneralSA, x: &[f64], mu: &ProbVector) -> Result<StationarityResidual> {
    let p = sa.product_at(x)?;
    let n = p.size();
    if mu.len() != n {
        return Err(Error::Shape(format!(
            "μ has {} entries, joint noise space has {n}",
            mu.len()
        )));
    }
    let m = mu.weights();
    let pushed = p.push_forward(m);
    let applied = p.apply(m);
    let standard = m.iter().zip(&pushed).map(|(a, b)| (a - b).abs()).sum();
    let harmonic = m.iter().zip(&applied).map(|(a, b)| (a - b).abs()).sum();
    Ok(StationarityResidual { standard, harmonic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{invariant_measure, StateDepKernel, StochasticKernel};
    use crate::sa::Drift;

    fn sa_with(k1: StochasticKernel, k2: StochasticKernel) -> GeneralSA {
        let drift = Drift::from_fn(1, |x, _, _, out| out[0] = -x[0]);
        GeneralSA::new(drift, StateDepKernel::constant(k1), k2, 0.1, vec![0.0], (0, 0)).unwrap()
    }

    #[test]
    fn product_invariant_has_zero_standard_residual() {
        let k1 = StochasticKernel::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap();
        let k2 = StochasticKernel::from_rows(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        let pi = invariant_measure(&k1).unwrap().tensor(&invariant_measure(&k2).unwrap());
        let r = stationarity_residual(&sa_with(k1, k2), &[0.0], &pi).unwrap();
        assert!(r.standard < 1e-14);
        // invariance does not make μ harmonic here
        assert!(r.harmonic > 1e-3);
    }

    #[test]
    fn single_state_noise_has_no_residual() {
        let one = StochasticKernel::identity(1);
        let r = stationarity_residual(&sa_with(one.clone(), one), &[0.0], &ProbVector::uniform(1)).unwrap();
        assert_eq!(r, StationarityResidual { standard: 0.0, harmonic: 0.0 });
    }

    #[test]
    fn symmetric_kernels_make_readings_coincide() {
        let k1 = StochasticKernel::from_rows(vec![vec![0.3, 0.7], vec![0.7, 0.3]]).unwrap();
        let one = StochasticKernel::identity(1);
        let mu = ProbVector::new(vec![0.8, 0.2]).unwrap();
        let r = stationarity_residual(&sa_with(k1, one), &[0.0], &mu).unwrap();
        // μP = Pμ = (0.38, 0.62)
        assert!((r.standard - 0.84).abs() < 1e-14);
        assert_eq!(r.standard, r.harmonic);
    }
}

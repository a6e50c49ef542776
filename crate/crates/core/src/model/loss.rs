//! Differentiable Chamfer loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Coarse and assembled outputs both count.
    #[default]
    Standard,
    /// Only the coarse output counts.
    Denoising,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LossMode::Standard),
            "denoising" => Ok(LossMode::Denoising),
            other => Err(Error::Argument(format!("unknown loss mode `{other}`"))),
        }
    }
}

/// CD-ℓ1 between two `[n × 3]` point sets on the tape: half the mean
/// nearest-neighbour Euclidean distance in each direction.
pub fn chamfer_l1_var<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    let d = a.pairwise_sq_dist(b)?;
    let (ab, _) = d.min_axis(1)?;
    let (ba, _) = d.min_axis(0)?;
    let ab = ab.sqrt()?.mean_all();
    let ba = ba.sqrt()?.mean_all();
    Ok(ab.add(ba)?.scale(0.5))
}

pub fn loss<'t>(gen1: Var<'t>, gen2: Var<'t>, gt: Var<'t>, mode: LossMode) -> Result<Var<'t>> {
    let l1 = chamfer_l1_var(gen1, gt)?;
    match mode {
        LossMode::Denoising => Ok(l1),
        LossMode::Standard => l1.add(chamfer_l1_var(gen2, gt)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::deterministic_points;
    use crate::metrics::chamfer_l1;
    use crate::tensor::{gradcheck, Precision, Tape, Tensor};

    fn cloud(n: usize, seed: u64) -> Tensor {
        Tensor::new([n, 3], deterministic_points(n, seed).into_iter().flatten().collect()).unwrap()
    }

    #[test]
    fn matches_metric_and_modes() {
        let tape = Tape::new(Precision::F64);
        let a = tape.constant(cloud(12, 1));
        let b = tape.constant(cloud(9, 2));
        let g = tape.constant(cloud(15, 3));
        let pa = deterministic_points(12, 1);
        let pg = deterministic_points(15, 3);
        let d = loss(a, b, g, LossMode::Denoising).unwrap().value().data()[0];
        assert!((d - chamfer_l1(&pa, &pg).unwrap()).abs() < 1e-12);
        let s = loss(a, b, g, LossMode::Standard).unwrap().value().data()[0];
        let pb = deterministic_points(9, 2);
        assert!((s - chamfer_l1(&pa, &pg).unwrap() - chamfer_l1(&pb, &pg).unwrap()).abs() < 1e-12);
        assert_eq!(loss(g, g, g, LossMode::Standard).unwrap().value().data()[0], 0.0);
        assert!("bogus".parse::<LossMode>().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rep = gradcheck::check(&[cloud(10, 4), cloud(13, 5)], 1e-5, 40, |_, v| chamfer_l1_var(v[0], v[1])).unwrap();
        assert!(rep.passes(1e-4), "{rep:?}");
    }

    #[test]
    fn coincident_points_have_finite_gradient() {
        let tape = Tape::new(Precision::F64);
        let a = tape.leaf(cloud(5, 6));
        let l = chamfer_l1_var(a, a).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(a).unwrap().is_finite());
    }
}

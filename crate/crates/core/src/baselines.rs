//! Reference motion models with the same bilateral-flow contract as GIMM.

use crate::error::{check_timestep, Result};
use crate::flow::FlowField;
use crate::tensor::Tensor;
use crate::warping::{forward_splat_with, SplatMode, SPLAT_EPS};

/// Linear-motion approximation of the bilateral flows:
/// `F_{t→0} = −(1−t)·t·F_{0→1} + t²·F_{1→0}` and
/// `F_{t→1} = (1−t)²·F_{0→1} − t·(1−t)·F_{1→0}`.
pub fn linear_motion(f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)> {
    check_timestep(t)?;
    f01.expect_same_dims(f10, "linear_motion")?;
    let a = f01.as_tensor();
    let b = f10.as_tensor();
    let ft0 = a.zip_map(b, |p, q| -(1.0 - t) * t * p + t * t * q);
    let ft1 = a.zip_map(b, |p, q| (1.0 - t) * (1.0 - t) * p - t * (1.0 - t) * q);
    Ok((FlowField::from_tensor(ft0)?, FlowField::from_tensor(ft1)?))
}

/// Forward-warp approximation: each endpoint flow, scaled to `t`, is splatted
/// to where it lands at time `t` with uniform weights. Holes take the
/// [`linear_motion`] value at the same pixel.
pub fn fwarp_motion(f01: &FlowField, f10: &FlowField, t: f64) -> Result<(FlowField, FlowField)> {
    let (lin0, lin1) = linear_motion(f01, f10, t)?;
    let (h, w) = (f01.height(), f01.width());
    let z = Tensor::zeros(&[h, w, 1]);
    let splat = |displacement: FlowField, value: FlowField, fallback: &FlowField| -> Result<FlowField> {
        let (out, cov) = forward_splat_with(value.as_tensor(), displacement.as_tensor(), &z, SplatMode::Softmax)?;
        let fb = fallback.as_tensor();
        Ok(FlowField::from_tensor(Tensor::from_fn_hwc(h, w, 2, |y, x, c| {
            if cov.at(y, x, 0) > SPLAT_EPS {
                out.at(y, x, c)
            } else {
                fb.at(y, x, c)
            }
        }))?)
    };
    let ft0 = splat(f01.scaled(t), f01.scaled(-t), &lin0)?;
    let ft1 = splat(f10.scaled(1.0 - t), f10.scaled(-(1.0 - t)), &lin1)?;
    Ok((ft0, ft1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact_on_translation() {
        let d = FlowField::constant(5, 6, 3.0, -1.5);
        for t in [0.0, 0.3, 0.5, 1.0] {
            let (a, b) = linear_motion(&d, &d.neg(), t).unwrap();
            assert!(a.sub(&d.scaled(-t)).max_abs() < 1e-12);
            assert!(b.sub(&d.scaled(1.0 - t)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn boundaries() {
        let f01 = FlowField::from_fn(4, 4, |y, x| (x as f64 * 0.3, y as f64 - 1.0));
        let f10 = FlowField::from_fn(4, 4, |y, x| (-(y as f64) * 0.2, 0.5 * x as f64));
        let (a, b) = linear_motion(&f01, &f10, 0.0).unwrap();
        assert_eq!(a.max_abs(), 0.0);
        assert_eq!(b, f01);
        let (a, b) = linear_motion(&f01, &f10, 1.0).unwrap();
        assert_eq!(a, f10);
        assert_eq!(b.max_abs(), 0.0);
        let (a, _) = fwarp_motion(&f01, &f10, 0.0).unwrap();
        assert_eq!(a.max_abs(), 0.0);
        let (_, b) = fwarp_motion(&f01, &f10, 1.0).unwrap();
        assert_eq!(b.max_abs(), 0.0);
    }

    #[test]
    fn fwarp_zero_flows_are_zero() {
        let z = FlowField::zeros(5, 5);
        let (a, b) = fwarp_motion(&z, &z, 0.4).unwrap();
        assert_eq!(a.max_abs(), 0.0);
        assert_eq!(b.max_abs(), 0.0);
    }

    #[test]
    fn fwarp_matches_linear_inside_translation() {
        let d = FlowField::constant(8, 8, 2.0, 1.0);
        let t = 0.5;
        let (a, b) = fwarp_motion(&d, &d.neg(), t).unwrap();
        let (la, lb) = linear_motion(&d, &d.neg(), t).unwrap();
        // holes sit on the entry side; everything else receives exact splats
        assert!(a.sub(&la).max_abs() < 1e-12);
        assert!(b.sub(&lb).max_abs() < 1e-12);
    }

    #[test]
    fn holes_take_linear_values() {
        let f01 = FlowField::constant(1, 4, 1.0, 0.0);
        let f10 = FlowField::constant(1, 4, -1.0, 0.0).scaled(0.5);
        let (a, _) = fwarp_motion(&f01, &f10, 1.0).unwrap();
        let (la, _) = linear_motion(&f01, &f10, 1.0).unwrap();
        assert_eq!(a.at(0, 0), la.at(0, 0));
        assert_eq!(a.at(0, 2), (-1.0, 0.0));
    }
}

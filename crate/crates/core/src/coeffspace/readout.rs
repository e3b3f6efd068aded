use super::{SynthFaceParams, D_EXP};
use crate::error::{Error, Result};

/// Coefficients per semantic group (mouth, brow, eye).
pub const GROUP_SIZE: usize = 8;

/// Readout weights shared by the three groups; all positive, so every
/// group's parameter is nondecreasing in each of its coefficients.
pub const READOUT_WEIGHTS: [f64; GROUP_SIZE] = [0.5, 0.25, 0.15, 0.1, 0.08, 0.06, 0.04, 0.02];

fn group_sum(coeffs: &[f32], group: usize) -> f64 {
    READOUT_WEIGHTS
        .iter()
        .zip(&coeffs[group * GROUP_SIZE..(group + 1) * GROUP_SIZE])
        .map(|(w, &c)| w * c as f64)
        .sum()
}

/// Fixed affine readout from an expression row to face parameters.
///
/// `mouth_open = clamp(0.5 + a·c[0..8], 0, 1)`,
/// `brow_raise = clamp(a·c[8..16], -1, 1)`,
/// `eye_open = clamp(0.5 + a·c[16..24], 0, 1)` with `a = READOUT_WEIGHTS`.
/// Identity and palette are left at their neutral values.
pub fn coeffs_to_params(coeffs: &[f32]) -> Result<SynthFaceParams> {
    if coeffs.len() != D_EXP {
        return Err(Error::Shape(format!("expected {D_EXP} coefficients, got {}", coeffs.len())));
    }
    if !coeffs.iter().all(|c| c.is_finite()) {
        return Err(Error::Data("non-finite expression coefficient".into()));
    }
    Ok(SynthFaceParams {
        mouth_open: (0.5 + group_sum(coeffs, 0)).clamp(0.0, 1.0),
        brow_raise: group_sum(coeffs, 1).clamp(-1.0, 1.0),
        eye_open: (0.5 + group_sum(coeffs, 2)).clamp(0.0, 1.0),
        ..SynthFaceParams::NEUTRAL
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_coefficients_give_neutral_face() {
        let p = coeffs_to_params(&[0.0; D_EXP]).unwrap();
        assert_eq!(p, SynthFaceParams::NEUTRAL);
    }

    #[test]
    fn first_coefficient_drives_mouth_monotonically() {
        let mut last = f64::NEG_INFINITY;
        for i in 0..40 {
            let s = -2.0 + 0.1 * i as f32;
            let mut c = [0.0f32; D_EXP];
            c[0] = s;
            let p = coeffs_to_params(&c).unwrap();
            // oracle: the affine map evaluated directly
            let expected = (0.5 + 0.5 * s as f64).clamp(0.0, 1.0);
            assert!((p.mouth_open - expected).abs() < 1e-12);
            assert!(p.mouth_open >= last);
            last = p.mouth_open;
        }
    }

    #[test]
    fn huge_coefficients_saturate() {
        let p = coeffs_to_params(&[1e6; D_EXP]).unwrap();
        assert_eq!((p.mouth_open, p.brow_raise, p.eye_open), (1.0, 1.0, 1.0));
        let p = coeffs_to_params(&[-1e6; D_EXP]).unwrap();
        assert_eq!((p.mouth_open, p.brow_raise, p.eye_open), (0.0, -1.0, 0.0));
    }

    #[test]
    fn wrong_dimension_is_a_shape_error() {
        assert!(matches!(coeffs_to_params(&[0.0; 3]), Err(Error::Shape(_))));
    }
}

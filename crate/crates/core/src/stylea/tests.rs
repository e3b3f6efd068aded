use super::*;
use crate::coeffspace::{render_synthetic_frame, SynthFaceParams};
use ndarray::array;

fn small() -> StyleAConfig {
    StyleAConfig { resolution: 32, channels: 8, d_w: 16, d_exp: 24, coeff_hidden: 16 }
}

fn face(hue: f64, palette: u32, mouth: f64) -> Frame {
    let p = SynthFaceParams { mouth_open: mouth, ..SynthFaceParams::NEUTRAL.with_identity(hue, palette) };
    render_synthetic_frame(&p, 32).unwrap()
}

fn fm(v: Array3<f64>) -> FeatureMap<f64> {
    FeatureMap::new(v).unwrap()
}

#[test]
fn adain_hand_computed_case() {
    let x = fm(array![[[1.0, 3.0], [1.0, 3.0]]]);
    let p = AdaINParams::new(array![2.0], array![5.0]).unwrap();
    let out = adain(&x, &p, 0.0).unwrap();
    assert_eq!(out.values(), &array![[[3.0, 7.0], [3.0, 7.0]]]);
    let with_eps = adain(&x, &p, ADAIN_EPS).unwrap();
    let k = 2.0 / (1.0 + ADAIN_EPS).sqrt();
    assert!((with_eps.values()[[0, 0, 1]] - (5.0 + k)).abs() < 1e-12);
}

fn ramp(c: usize, side: usize) -> Array3<f64> {
    Array3::from_shape_fn((c, side, side), |(k, y, x)| (k * 100 + y * 10 + x) as f64 * 0.1 + ((x * 7 + y * 3) % 5) as f64)
}

#[test]
fn adain_identity_reconstruction_and_normalization() {
    let x = fm(ramp(3, 4));
    let mean = x.values().mean_axis(Axis(2)).unwrap().mean_axis(Axis(1)).unwrap();
    let std = Array1::from_shape_fn(3, |c| {
        let ch = x.values().index_axis(Axis(0), c);
        (ch.mapv(|v| (v - mean[c]).powi(2)).mean().unwrap() + ADAIN_EPS).sqrt()
    });
    let back = adain(&x, &AdaINParams::new(std, mean).unwrap(), ADAIN_EPS).unwrap();
    for (a, b) in back.values().iter().zip(x.values()) {
        assert!((a - b).abs() < 1e-5);
    }
    let unit = AdaINParams::new(Array1::ones(3), Array1::zeros(3)).unwrap();
    let n = adain(&x, &unit, ADAIN_EPS).unwrap();
    for ch in n.values().axis_iter(Axis(0)) {
        let m = ch.mean().unwrap();
        let s = ch.mapv(|v| (v - m).powi(2)).mean().unwrap().sqrt();
        assert!(m.abs() < 1e-4 && (s - 1.0).abs() < 1e-4);
    }
    let twice = adain(&n, &unit, ADAIN_EPS).unwrap();
    for (a, b) in twice.values().iter().zip(n.values()) {
        assert!((a - b).abs() < 1e-5);
    }
    assert!(matches!(adain(&x, &AdaINParams::new(array![1.0], array![0.0]).unwrap(), 1e-5), Err(Error::Shape(_))));
}

#[test]
fn warp_oracles() {
    let m = fm(ramp(2, 4));
    assert_eq!(warp(&m, &FlowField::zeros(4)).unwrap(), m);
    let shifted = warp(&m, &FlowField::constant(4, 1.0, 0.0)).unwrap();
    for c in 0..2 {
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(shifted.values()[[c, y, x]], m.values()[[c, y, (x + 1).min(3)]]);
            }
        }
    }
    let horizontal = fm(Array3::from_shape_fn((1, 4, 4), |(_, _, x)| x as f64));
    let mid = warp(&horizontal, &FlowField::constant(4, 0.5, 0.0)).unwrap();
    for y in 0..4 {
        for x in 0..3 {
            assert!((mid.values()[[0, y, x]] - (x as f64 + 0.5)).abs() < 1e-12);
        }
        assert_eq!(mid.values()[[0, y, 3]], 3.0);
    }
    assert!(matches!(warp(&m, &FlowField::zeros(2)), Err(Error::Shape(_))));
}

#[test]
fn warp_is_linear_in_the_map() {
    let m1 = ramp(2, 4);
    let m2 = ramp(2, 4).mapv(|v| (v * 1.7).sin());
    let flow = FlowField::new(Array3::from_shape_fn((4, 4, 2), |(y, x, k)| ((y * 4 + x + k) as f64 * 0.37).sin())).unwrap();
    let (a, b) = (0.75, -2.0);
    let lhs = warp(&fm(&m1 * a + &m2 * b), &flow).unwrap();
    let rhs = warp(&fm(m1), &flow).unwrap().values() * a + warp(&fm(m2), &flow).unwrap().values() * b;
    for (p, q) in lhs.values().iter().zip(&rhs) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn fresh_model_zero_init_contracts() {
    let model = StyleAModel::<f64>::new(small(), 3).unwrap();
    let id = face(0.3, 0, 0.5);
    let flow = model.motion_generator(&id, &[0.3; 24]).unwrap();
    assert_eq!(flow.displacement().dim(), (8, 8, 2));
    assert!(flow.displacement().iter().all(|&v| v == 0.0));
    let w_i = model.style_code(&id).unwrap();
    let w_s = model.style_code(&face(0.3, 2, 0.5)).unwrap();
    assert_eq!(model.modres_merge(&w_i, &w_s, 1.0).unwrap(), w_i);
    assert_eq!(model.modres_merge(&w_i, &w_s, 0.0).unwrap(), w_i);
    let m = fm(ramp(8, 8));
    assert_eq!(model.refine(&m, &fm(ramp(8, 8).mapv(f64::cos))).unwrap(), m);
}

#[test]
fn modres_blend_zero_is_identity_after_perturbation() {
    let mut model = StyleAModel::<f64>::new(small(), 3).unwrap();
    let ids: Vec<_> = model.store().iter().filter(|(_, p)| p.group == MODRES).map(|(id, _)| id).collect();
    for id in ids {
        model.store_mut().get_mut(id).mapv_inplace(|v| v + 0.05);
    }
    let w_i = model.style_code(&face(0.2, 0, 0.5)).unwrap();
    let w_s = model.style_code(&face(0.2, 1, 0.5)).unwrap();
    assert_eq!(model.modres_merge(&w_i, &w_s, 0.0).unwrap(), w_i);
    let norms: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&b| {
            let out = model.modres_merge(&w_i, &w_s, b).unwrap();
            (out.values() - w_i.values()).mapv(|v| v * v).sum().sqrt()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] >= w[0]));
    assert!(norms[4] > 0.0);
}

#[test]
fn content_pyramid_halves_and_sees_identity() {
    let model = StyleAModel::<f64>::new(small(), 5).unwrap();
    let a = model.content_encoder(&face(0.1, 0, 0.5)).unwrap();
    let b = model.content_encoder(&face(0.7, 0, 0.5)).unwrap();
    assert_eq!(a.len(), model.config().skip_resolutions().len());
    let sides: Vec<_> = a.iter().map(FeatureMap::side).collect();
    assert_eq!(sides, vec![32, 16, 8]);
    let deep = (a[2].values() - b[2].values()).mapv(|v| v * v).sum();
    assert!(deep > 0.0);
}

#[test]
fn zero_flow_without_skips_matches_plain_generator() {
    let model = StyleAModel::<f64>::new(small(), 7).unwrap();
    let w = model.style_code(&face(0.4, 0, 0.5)).unwrap();
    let plain = {
        let sess = Session::inference(model.store());
        model.generator.forward(&sess, &w.to_var(), &mut |_, x| Ok(x)).unwrap()
    };
    let off = SynthOptions { use_skips: false, use_refine: false };
    let frame = model.synthesize(&w, None, &FlowField::zeros(8), off).unwrap();
    let expect = plain.value().index_axis(Axis(0), 0).mapv(|v| v as f32);
    assert_eq!(frame.pixels(), &expect.into_dimensionality::<Ix3>().unwrap().mapv(|v| v.clamp(0.0, 1.0)));
    assert_eq!((frame.height(), frame.width()), (32, 32));
    let feats = model.content_encoder(&face(0.4, 0, 0.5)).unwrap();
    let full = model.synthesize(&w, Some(&feats), &FlowField::zeros(8), SynthOptions::default()).unwrap();
    assert_eq!(full, frame);
}

#[test]
fn synthesis_is_deterministic() {
    let a = StyleAModel::<f32>::new(small(), 11).unwrap();
    let b = StyleAModel::<f32>::new(small(), 11).unwrap();
    let sess_a = Session::inference(a.store());
    let sess_b = Session::inference(b.store());
    let id = Var::constant(face(0.5, 0, 0.2).to_tensor::<f32>());
    let art = Var::constant(face(0.5, 3, 0.2).to_tensor::<f32>());
    let c = Var::constant(ArrayD::from_elem(IxDyn(&[1, 24]), 0.2f32));
    let x = a.stage_a_forward(&sess_a, &id, &art, &c, 1.0, SynthOptions::default()).unwrap();
    let y = b.stage_a_forward(&sess_b, &id, &art, &c, 1.0, SynthOptions::default()).unwrap();
    assert_eq!(x.value(), y.value());
}

#[test]
fn refine_gradients_match_finite_differences() {
    let mut model = StyleAModel::<f64>::new(StyleAConfig { channels: 2, ..small() }, 2).unwrap();
    let ids: Vec<_> = model.store().iter().filter(|(_, p)| p.group == REFINE).map(|(id, _)| id).collect();
    for (k, id) in ids.iter().enumerate() {
        model.store_mut().get_mut(*id).mapv_inplace(|v| v + 0.1 * (k as f64 + 1.0));
    }
    let m = ramp(2, 4).mapv(|v| (v * 0.3).sin()).insert_axis(Axis(0)).into_dyn();
    let ctx = ramp(2, 4).mapv(|v| (v * 0.7).cos()).insert_axis(Axis(0)).into_dyn();
    let weights = ramp(2, 4).mapv(|v| (v * 1.3).sin()).insert_axis(Axis(0)).into_dyn();
    let objective = |model: &StyleAModel<f64>, m: &ArrayD<f64>, leaf: bool| {
        let sess = Session::training(model.store(), &[REFINE]).unwrap();
        let mv = if leaf { Var::leaf(m.clone()) } else { Var::constant(m.clone()) };
        let out = model.refiner.forward(&sess, &mv, &Var::constant(ctx.clone())).unwrap();
        let loss = (&out * &Var::constant(weights.clone())).sum();
        let g = loss.backward();
        (loss.item(), g.get_or_zeros(&mv), sess.param_grads(&g))
    };
    let (_, gm, gp) = objective(&model, &m, true);
    let h = 1e-6;
    for i in 0..m.len() {
        let mut up = m.clone();
        up.as_slice_mut().unwrap()[i] += h;
        let mut dn = m.clone();
        dn.as_slice_mut().unwrap()[i] -= h;
        let fd = (objective(&model, &up, false).0 - objective(&model, &dn, false).0) / (2.0 * h);
        let an = gm.as_slice().unwrap()[i];
        assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-4, "m[{i}]: {fd} vs {an}");
    }
    for id in ids {
        let len = model.store().get(id).len();
        for i in (0..len).step_by(len.div_ceil(5)) {
            let orig = model.store().get(id).as_slice().unwrap()[i];
            model.store_mut().get_mut(id).as_slice_mut().unwrap()[i] = orig + h;
            let up = objective(&model, &m, false).0;
            model.store_mut().get_mut(id).as_slice_mut().unwrap()[i] = orig - h;
            let dn = objective(&model, &m, false).0;
            model.store_mut().get_mut(id).as_slice_mut().unwrap()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = gp.0[&id].as_slice().unwrap()[i];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-4, "param {i}: {fd} vs {an}");
        }
    }
}

#[test]
fn configuration_is_validated() {
    assert!(matches!(StyleAModel::<f32>::new(StyleAConfig { resolution: 48, ..small() }, 0), Err(Error::Config(_))));
    let c = StyleAConfig::default();
    assert_eq!((c.num_blocks(), c.num_layers(), c.warp_resolution()), (4, 8, 16));
}

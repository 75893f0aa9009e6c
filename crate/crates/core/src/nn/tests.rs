use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::{DiffusionSchedule, NormalizationSpec};
use crate::geometry::{Point3, PointSet};
use crate::hand::build_capsule_hand;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference check of every weight of `params` (or a strided subset).
fn fd_check(params: &ParamSet, stride: usize, loss: &dyn Fn(&ParamSet) -> (f64, Vec<Vec<f64>>)) {
    let (_, grads) = loss(params);
    let h = 1e-5;
    let mut k = 0;
    for i in 0..params.len() {
        for j in 0..params.tensor(i).len() {
            k += 1;
            if k % stride != 0 {
                continue;
            }
            let mut p = params.clone();
            p.tensor_mut(i).data_mut()[j] += h;
            let fp = loss(&p).0;
            p.tensor_mut(i).data_mut()[j] -= 2.0 * h;
            let fm = loss(&p).0;
            let fd = (fp - fm) / (2.0 * h);
            let an = grads[i][j];
            assert!(rel_err(fd, an) < 1e-4, "{}[{j}]: fd {fd} analytic {an}", params.name(i));
        }
    }
}

#[test]
fn quadratic_and_constant_losses() {
    let mut p = ParamSet::new();
    p.add("w", Tensor::row(vec![0.5, -1.5, 2.0]));
    let mut g = Graph::new();
    let w = g.param(&p, 0);
    let sq = g.square(w);
    let l = g.sum(sq);
    let grads = g.backward(l).unwrap();
    assert_eq!(g.param_grads(&grads, &p)[0], vec![1.0, -3.0, 4.0]);
    let again = g.backward(l).unwrap();
    assert_eq!(g.param_grads(&again, &p)[0], vec![1.0, -3.0, 4.0]);

    let mut g = Graph::new();
    let _w = g.param(&p, 0);
    let c = g.input(Tensor::scalar(3.0));
    let grads = g.backward(c).unwrap();
    assert_eq!(g.param_grads(&grads, &p)[0], vec![0.0; 3]);
    let w = g.param(&p, 0);
    assert!(g.backward(w).is_err());
}

#[test]
fn mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = ParamSet::new();
    let mlp = Mlp::new(&mut p, "mlp", &[5, 7, 6, 3], true, true, false, &mut rng);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |p: &ParamSet| {
        let mut g = Graph::new();
        let xi = g.input(Tensor::matrix(4, 5, x.clone()).unwrap());
        let y = mlp.forward(&mut g, p, xi).unwrap();
        let pooled = g.max_rows(y).unwrap();
        let sq = g.square(pooled);
        let a = g.sum(sq);
        let ab = g.abs(y);
        let b = g.mean(ab);
        let ce = g.cross_entropy(pooled, 1).unwrap();
        let l = g.weighted_sum(&[(1.0, a), (0.5, b), (2.0, ce)]).unwrap();
        let grads = g.backward(l).unwrap();
        (g.scalar(l), g.param_grads(&grads, p))
    };
    fd_check(&p, 1, &loss);
}

#[test]
fn softmax_sums_to_one() {
    let z = [3.0, -1.0, 0.5, 100.0];
    assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn small_config() -> NetConfig {
    NetConfig {
        point_widths: vec![8, 12],
        feature_width: 10,
        gsp_points: 16,
        gsp_hidden: vec![12],
        num_classes: 5,
        gcp_hidden: vec![8],
        hand_widths: vec![6, 8],
        cond_hidden: vec![12],
        time_dim: 8,
    }
}

fn fixture_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointSet {
    let pts: Vec<Point3> = (0..n)
        .map(|_| Point3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.0..0.2)))
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    PointSet::with_labels(pts, labels).unwrap()
}

#[test]
fn encoder_is_permutation_invariant() {
    let (net, p) = S2hNet::new(&NetConfig::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cloud = fixture_cloud(&mut rng, 300);
    let spec = NormalizationSpec::default();
    let f = encode_scene(&net, &p, &cloud, &spec).unwrap();
    assert_eq!(f.len(), 256);
    let mut idx: Vec<usize> = (0..300).collect();
    for i in (1..300).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let shuffled = PointSet::with_labels(
        idx.iter().map(|&i| cloud.points()[i]).collect(),
        idx.iter().map(|&i| cloud.labels().unwrap()[i]).collect(),
    )
    .unwrap();
    assert_eq!(encode_scene(&net, &p, &shuffled, &spec).unwrap(), f);
    let (net2, p2) = S2hNet::new(&NetConfig::default(), 3).unwrap();
    assert_eq!(encode_scene(&net2, &p2, &cloud, &spec).unwrap(), f);
    assert!(encode_scene(&net, &p, &PointSet::default(), &spec).is_err());
}

#[test]
fn encoder_gradient_matches_finite_differences() {
    let (net, p) = S2hNet::new(&small_config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cloud = fixture_cloud(&mut rng, 40);
    let spec = NormalizationSpec::default();
    let loss = |p: &ParamSet| {
        let mut g = Graph::new();
        let f = net.encode(&mut g, p, &cloud, &spec).unwrap();
        let sq = g.square(f);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        (g.scalar(l), g.param_grads(&grads, p))
    };
    fd_check(&p, 3, &loss);
}

#[test]
fn heads_shape_contracts() {
    let (net, mut p) = S2hNet::new(&NetConfig::default(), 7).unwrap();
    let spec = NormalizationSpec::default();
    let f: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
    assert_eq!(gsp_complete(&net, &p, &f, &spec).unwrap().len(), 512);
    let logits = gcp_classify(&net, &p, &f).unwrap();
    assert_eq!(logits.len(), 35);
    assert!((softmax(&logits).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(gsp_complete(&net, &p, &f[..100], &spec).is_err());
    assert!(gcp_classify(&net, &p, &f[..100]).is_err());

    let last = net.gsp.mlp.layers.last().unwrap().bias.unwrap();
    p.tensor_mut(last).data_mut().fill(0.0);
    let zero = gsp_complete(&net, &p, &vec![0.0; 256], &spec).unwrap();
    assert!(zero.points().iter().all(|q| q.norm() == 0.0));
}

#[test]
fn chamfer_op_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target: Vec<Point3> = (0..30).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
    let mut p = ParamSet::new();
    p.add("x", Tensor::matrix(10, 3, (0..30).map(|_| rng.random()).collect()).unwrap());
    let loss = |p: &ParamSet| {
        let mut g = Graph::new();
        let x = g.param(p, 0);
        let l = ops::chamfer_to(&mut g, x, &target).unwrap();
        let grads = g.backward(l).unwrap();
        (g.scalar(l), g.param_grads(&grads, p))
    };
    let pts: Vec<Point3> = p.tensor(0).data().chunks(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
    let want = crate::geometry::chamfer_distance(&pts, &target).unwrap();
    assert!((loss(&p).0 - want).abs() < 1e-14);
    fd_check(&p, 1, &loss);
}

#[test]
fn denoiser_is_deterministic() {
    let (net, p) = S2hNet::new(&small_config(), 9).unwrap();
    let model = build_capsule_hand(0);
    let spec = NormalizationSpec::default();
    let sched = DiffusionSchedule::linear(1000, 1e-4, 2e-2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h: Vec<f64> = (0..61).map(|_| rng.random_range(-0.3..0.3)).collect();
    let f: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = denoise(&net, &p, &h, 500, &sched, &f, &model, &spec).unwrap();
    assert_eq!(a.len(), 61);
    assert_eq!(a, denoise(&net, &p, &h, 500, &sched, &f, &model, &spec).unwrap());
    assert!(matches!(
        denoise(&net, &p, &vec![f64::NAN; 61], 5, &sched, &f, &model, &spec),
        Err(crate::Error::DenoiserDiverged)
    ));
    assert!(matches!(
        denoise(&net, &p, &h, 0, &sched, &f, &model, &spec),
        Err(crate::Error::TimestepOutOfRange { .. })
    ));
}

#[test]
fn denoiser_output_gradient_matches_finite_differences() {
    let (net, p) = S2hNet::new(&small_config(), 11).unwrap();
    let model = build_capsule_hand(0);
    let spec = NormalizationSpec::default();
    let sched = DiffusionSchedule::linear(1000, 1e-4, 2e-2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h: Vec<f64> = (0..61).map(|_| rng.random_range(-0.3..0.3)).collect();
    let cloud = fixture_cloud(&mut rng, 30);
    let loss = |p: &ParamSet| {
        let mut g = Graph::new();
        let f = net.encode(&mut g, p, &cloud, &spec).unwrap();
        let y = net.denoise(&mut g, p, &h, 300, &sched, f, &model, &spec).unwrap();
        let sq = g.square(y);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        (g.scalar(l), g.param_grads(&grads, p))
    };
    fd_check(&p, 7, &loss);
}

#[test]
fn time_embedding_layout() {
    let e = time_embedding(0, 8);
    assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    let e = time_embedding(3, 64);
    assert!((e[0] - 3f64.sin()).abs() < 1e-15 && (e[32] - 3f64.cos()).abs() < 1e-15);
}

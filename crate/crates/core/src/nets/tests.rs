use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{enrich, Segmentation};
use crate::gridworld::{sample_task, scripted_expert, Level};

fn sample(k: usize) -> (SkillModel, EnrichedTrajectory) {
    let model = SkillModel::new(ModelConfig { seed: 4, ..ModelConfig::tiny(k) }).unwrap();
    let (traj, _) = scripted_expert(&sample_task(Level::TwoSubgoal, 1).unwrap()).unwrap();
    let t = traj.len();
    let lens: Vec<usize> = (0..t).step_by(3).map(|s| (t - s).min(3)).collect();
    let ann: Vec<String> = (0..lens.len()).map(|i| format!("part {i}")).collect();
    let e = enrich(&traj, &Segmentation::from_lengths(&lens, &ann)).unwrap();
    (model, e)
}

fn q_values(m: &SkillModel, e: &EnrichedTrajectory) -> (Matrix, Matrix) {
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &e.observations, &e.goal).unwrap();
    let q = m.q_forward(&mut g, &enc, e).unwrap();
    (g.value(q.beta_logits).clone(), g.value(q.k_logits).clone())
}

fn p_values(m: &SkillModel, e: &EnrichedTrajectory) -> (Matrix, Matrix) {
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &e.observations, &e.goal).unwrap();
    let p = m.p_forward(&mut g, &enc, &e.actions).unwrap();
    (g.value(p.beta_logits).clone(), g.value(p.k_logits).clone())
}

#[test]
fn output_shapes() {
    let (m, e) = sample(3);
    let t = e.len();
    let (qb, qk) = q_values(&m, &e);
    assert_eq!(qb.shape(), (t, 2));
    assert_eq!(qk.shape(), (t * 4, 3));
    let (pb, pk) = p_values(&m, &e);
    assert_eq!(pb.shape(), (t * 4, 2));
    assert_eq!(pk.shape(), (t * 4, 3));
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &e.observations, &e.goal).unwrap();
    let pi = m.pi_forward(&mut g, &enc);
    assert_eq!(g.shape(pi.logits), (t * 3, NUM_ACTIONS));
    assert!(qb.is_finite() && qk.is_finite() && pb.is_finite() && pk.is_finite());
}

#[test]
fn repeated_calls_are_bit_identical() {
    let (m, e) = sample(3);
    assert_eq!(q_values(&m, &e), q_values(&m, &e));
    let m2 = SkillModel::new(m.cfg.clone()).unwrap();
    assert_eq!(q_values(&m, &e), q_values(&m2, &e));
}

#[test]
fn posterior_sees_the_future_but_prior_does_not() {
    let (m, e) = sample(3);
    let mut changed = e.clone();
    let last = e.len() - 1;
    changed.observations[last] = changed.observations[0];
    changed.observations[last].0[0][0] = [cell::BALL, 2, 0];
    let t = 1;
    let (qb, _) = q_values(&m, &e);
    let (qb2, _) = q_values(&m, &changed);
    assert_ne!(qb.row(t), qb2.row(t));
    let (pb, pk) = p_values(&m, &e);
    let (pb2, pk2) = p_values(&m, &changed);
    let slots = m.k() + 1;
    for r in 0..last * slots {
        assert_eq!(pb.row(r), pb2.row(r));
        assert_eq!(pk.row(r), pk2.row(r));
    }
    let a = m.pi_logits_for_skill(&e.observations[..2], &e.goal, 1).unwrap();
    let b = m.pi_logits_for_skill(&changed.observations[..2], &changed.goal, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn incremental_decoding_matches_the_batched_pass() {
    let (m, e) = sample(3);
    let (pb, pk) = p_values(&m, &e);
    let mut g = Graph::new();
    let enc = m.encode(&mut g, &e.observations, &e.goal).unwrap();
    let pi = m.pi_forward(&mut g, &enc);
    let pil = g.value(pi.logits).clone();
    let mut st = m.online(&e.goal);
    let slots = m.k() + 1;
    for t in 0..e.len() {
        m.observe(&mut st, &e.observations[t]);
        for prev in 0..slots {
            let p = (prev < m.k()).then_some(prev);
            let (b, k) = m.prior_logits(&st, p);
            let row = t * slots + prev;
            for (x, y) in b.iter().zip(pb.row(row)) {
                assert!((x - y).abs() < 1e-9);
            }
            for (x, y) in k.iter().zip(pk.row(row)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        for s in 0..m.k() {
            let l = m.policy_logits(&st, s).unwrap();
            for (x, y) in l.iter().zip(pil.row(t * m.k() + s)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        m.acted(&mut st, e.actions[t]);
    }
    assert_eq!(st.steps(), e.len());
}

#[test]
fn invalid_skill_is_rejected() {
    let (m, e) = sample(2);
    assert!(matches!(
        m.pi_logits_for_skill(&e.observations[..1], &e.goal, 2),
        Err(Error::InvalidSkill { skill: 2, k: 2 })
    ));
    let st = m.online(&e.goal);
    assert!(m.policy_logits(&st, 5).is_err());
}

#[test]
fn cold_relaxation_picks_the_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = Graph::new();
    let l = g.constant(Matrix::from_rows(&vec![vec![10.0, 0.0, 0.0]; 200]));
    let y = relaxed_categorical_sample(&mut g, l, RelaxationConfig { temperature: 0.01, hard: false }, &mut rng).unwrap();
    for i in 0..200 {
        assert!(g.value(y).get(i, 0) > 0.999);
    }
}

#[test]
fn sample_frequencies_follow_softmax() {
    let n = 100_000;
    let logits = [1.0, 0.0, -0.5, 0.3];
    let p = crate::autograd::softmax(&logits);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let l = g.constant(Matrix::from_rows(&vec![logits.to_vec(); n]));
    let y = relaxed_categorical_sample(&mut g, l, RelaxationConfig { temperature: 1.0, hard: true }, &mut rng).unwrap();
    let v = g.value(y);
    let counts = v.col_sums();
    for j in 0..4 {
        let f = counts.get(0, j) / n as f64;
        let sigma = (p[j] * (1.0 - p[j]) / n as f64).sqrt();
        assert!((f - p[j]).abs() < 3.0 * sigma, "class {j}: {f} vs {}", p[j]);
    }
    for i in 0..n {
        assert_eq!(v.row(i).iter().sum::<f64>(), 1.0);
        assert_eq!(v.row(i).iter().filter(|&&x| x == 1.0).count(), 1);
    }
}

#[test]
fn hard_sample_passes_gradient_to_the_soft_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = crate::autograd::ParamStore::new();
    let id = store.add("l", Matrix::row_vector(vec![0.2, -0.1, 0.4]));
    let mut g = Graph::new();
    let l = g.param(&store, id);
    let y = relaxed_categorical_sample(&mut g, l, RelaxationConfig { temperature: 0.5, hard: true }, &mut rng).unwrap();
    let w = g.constant(Matrix::row_vector(vec![1.0, 2.0, 3.0]));
    let s = g.mul(y, w);
    let s = g.sum(s);
    let grads = g.backward(s, &store);
    assert!(grads.get(id).sq_norm() > 0.0);
}

#[test]
fn bad_relaxation_inputs_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let l = g.constant(Matrix::row_vector(vec![f64::NAN, 0.0]));
    assert!(matches!(
        relaxed_categorical_sample(&mut g, l, RelaxationConfig::default(), &mut rng),
        Err(Error::NonFinite(_))
    ));
    let l = g.constant(Matrix::row_vector(vec![0.0, 0.0]));
    assert!(relaxed_categorical_sample(&mut g, l, RelaxationConfig { temperature: 0.0, hard: false }, &mut rng).is_err());
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let (m, e) = sample(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&m, &path).unwrap();
    let back = load_checkpoint(&path, Some(3), Some(NUM_ACTIONS)).unwrap();
    assert_eq!(back.store.fingerprint(), m.store.fingerprint());
    assert_eq!(q_values(&back, &e), q_values(&m, &e));
    assert!(matches!(load_checkpoint(&path, Some(4), None), Err(Error::Checkpoint(_))));
    assert!(matches!(load_checkpoint(&path, None, Some(7)), Err(Error::Checkpoint(_))));
}

#[test]
fn empty_sequence_is_an_error() {
    let (m, _) = sample(2);
    let mut g = Graph::new();
    assert!(m.encode(&mut g, &[], "go").is_err());
}

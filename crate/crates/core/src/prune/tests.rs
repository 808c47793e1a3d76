use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::exec::run_f32;
use crate::graph::{GraphBuilder, Padding};

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// conv(c1) -> relu -> conv(c2) -> relu -> maxpool -> flatten -> fc(5) -> softmax
fn conv_net(c1: usize, c2: usize, seed: u64) -> GraphIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new("convs", &[1, 6, 6, 3]);
    let x = b.input_id();
    let y = b.conv2d(&x, c1, [3, 3], random(&mut rng, c1 * 27), Some(random(&mut rng, c1)), [1, 1], Padding::Same);
    let y = b.relu(&y);
    let w2 = random(&mut rng, c2 * 9 * c1);
    let y = b.conv2d(&y, c2, [3, 3], w2, Some(random(&mut rng, c2)), [1, 1], Padding::Same);
    let y = b.relu(&y);
    let y = b.max_pool(&y, [2, 2], [2, 2], Padding::Valid);
    let y = b.flatten(&y);
    let y = b.fully_connected(&y, 5, random(&mut rng, 5 * 9 * c2), Some(random(&mut rng, 5)));
    let y = b.softmax(&y);
    b.finish(&[y]).unwrap()
}

/// conv(8) -> relu -> dw -> relu -> conv(6) -> avgpool -> flatten -> fc(4) -> softmax
fn dw_net(seed: u64) -> GraphIR {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new("dw", &[1, 8, 8, 3]);
    let x = b.input_id();
    let y = b.conv2d(&x, 8, [3, 3], random(&mut rng, 8 * 27), Some(random(&mut rng, 8)), [2, 2], Padding::Same);
    let y = b.relu(&y);
    let y = b.depthwise_conv2d(&y, [3, 3], random(&mut rng, 72), Some(random(&mut rng, 8)), [1, 1], Padding::Same);
    let y = b.relu(&y);
    let y = b.conv2d(&y, 6, [1, 1], random(&mut rng, 48), Some(random(&mut rng, 6)), [1, 1], Padding::Valid);
    let y = b.avg_pool(&y, [4, 4], [4, 4], Padding::Valid);
    let y = b.flatten(&y);
    let y = b.fully_connected(&y, 4, random(&mut rng, 24), None);
    let y = b.softmax(&y);
    b.finish(&[y]).unwrap()
}

#[test]
fn l2_norm_of_a_filter() {
    let mut b = GraphBuilder::new("fc", &[1, 2]);
    let x = b.input_id();
    let y = b.fully_connected(&x, 2, vec![3.0, 4.0, 0.0, 1.0], None);
    let y = b.relu(&y);
    let y = b.fully_connected(&y, 2, vec![1.0; 4], None);
    let y = b.softmax(&y);
    let g = b.finish(&[y]).unwrap();
    let scores = rank_filters(&g).unwrap();
    assert_eq!(scores.len(), 2, "classifier is not ranked");
    assert_eq!(scores[0].layer_id, "fc1");
    assert!((scores[0].l2_norm - 5.0).abs() < 1e-12);
    assert!((scores[1].l2_norm - 1.0).abs() < 1e-12);
}

#[test]
fn stage_sizes_follow_the_original_count() {
    let g = conv_net(40, 10, 1);
    let plan = build_prune_plan(&g, &DEFAULT_SCHEDULE).unwrap();
    let sizes = |layer: &str| plan.stages.iter().map(|s| s[layer].len()).collect::<Vec<_>>();
    assert_eq!(sizes("conv1"), [4, 2, 2]);
    assert_eq!(plan.kept("conv1").len(), 32);
    assert_eq!(sizes("conv2"), [1, 0, 0]);
    assert_eq!(plan.kept("conv2").len(), 9);
}

#[test]
fn floor_is_robust_to_float_products() {
    let g = conv_net(100, 4, 1);
    let plan = PrunePlan::new(&g, &[0.29]).unwrap();
    assert_eq!(plan.stage_removals(0, 100), 29);
}

#[test]
fn stages_are_disjoint_and_remove_the_weakest() {
    let g = conv_net(40, 20, 7);
    let plan = build_prune_plan(&g, &DEFAULT_SCHEDULE).unwrap();
    let scores = rank_filters(&g).unwrap();
    for layer in ["conv1", "conv2"] {
        let mut seen = BTreeSet::new();
        let mut prior_kept: Vec<usize> = (0..plan.original_counts[layer]).collect();
        for stage in &plan.stages {
            let removed = &stage[layer];
            for f in removed {
                assert!(seen.insert(*f), "{layer} filter {f} removed twice");
            }
            let norm = |f: usize| scores.iter().find(|s| s.layer_id == layer && s.filter_index == f).unwrap().l2_norm;
            prior_kept.retain(|f| !removed.contains(f));
            let max_removed = removed.iter().map(|&f| norm(f)).fold(f64::MIN, f64::max);
            let min_kept = prior_kept.iter().map(|&f| norm(f)).fold(f64::MAX, f64::min);
            assert!(max_removed <= min_kept);
        }
    }
}

#[test]
fn ties_go_to_the_lower_index() {
    let scores: Vec<FilterScore> = [2.0, 1.0, 1.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &n)| FilterScore { layer_id: "x".into(), filter_index: i, l2_norm: n })
        .collect();
    assert_eq!(lowest_scores(&scores, 0..4, 2), [1, 2]);
}

#[test]
fn exclusions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut b = GraphBuilder::new("res", &[1, 4, 4, 2]);
    let x = b.input_id();
    let a = b.conv2d(&x, 2, [1, 1], random(&mut rng, 4), None, [1, 1], Padding::Valid);
    let c = b.conv2d(&x, 2, [1, 1], random(&mut rng, 4), None, [1, 1], Padding::Valid);
    let s = b.add(&a, &c);
    let y = b.conv2d(&s, 3, [1, 1], random(&mut rng, 6), None, [1, 1], Padding::Valid);
    let y = b.relu(&y);
    let y = b.flatten(&y);
    let y = b.fully_connected(&y, 2, random(&mut rng, 96), None);
    let y = b.softmax(&y);
    let g = b.finish(&[y]).unwrap();
    let ex = excluded_layers(&g);
    assert!(ex["conv1"].contains("add1"));
    assert!(ex["conv2"].contains("add1"));
    assert!(ex["fc1"].contains("softmax1"));
    assert_eq!(prunable_layers(&g).keys().collect::<Vec<_>>(), ["conv3"]);
}

fn assert_equivalent(g: &GraphIR, plan: &PrunePlan, input_len: usize) {
    let masked = apply_masks(g, plan).unwrap();
    let slim = materialize(g, plan).unwrap();
    assert!(slim.param_count() < g.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let x = random(&mut rng, input_len);
        let a = run_f32(&masked, &x).unwrap().remove(0);
        let b = run_f32(&slim, &x).unwrap().remove(0);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() <= 1e-5, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn masked_matches_materialized() {
    let g = conv_net(12, 10, 5);
    let plan = build_prune_plan(&g, &[0.2, 0.1]).unwrap();
    assert_equivalent(&g, &plan, 108);
}

#[test]
fn masked_matches_materialized_through_depthwise() {
    let g = dw_net(9);
    let plan = build_prune_plan(&g, &[0.25, 0.25]).unwrap();
    assert_eq!(plan.kept("conv1").len(), 4);
    let slim = materialize(&g, &plan).unwrap();
    assert_eq!(slim.tensors["dwconv1.w"].shape, [1, 3, 3, 4]);
    assert_eq!(slim.tensors["dwconv1.b"].shape, [4]);
    assert_eq!(slim.tensors["conv2.w"].shape, [4, 1, 1, 4]);
    assert_eq!(slim.tensors["fc1.w"].shape, [4, 4]);
    assert_equivalent(&g, &plan, 192);
}

#[test]
fn consumer_input_channels_are_sliced() {
    let g = conv_net(8, 16, 2);
    let mut plan = PrunePlan::new(&g, &[0.25]).unwrap();
    plan.next_stage(&g).unwrap();
    let slim = materialize(&g, &plan).unwrap();
    assert_eq!(slim.tensors["conv1.w"].shape, [6, 3, 3, 3]);
    assert_eq!(slim.tensors["conv2.w"].shape, [12, 3, 3, 6]);
    assert_eq!(slim.tensors["fc1.w"].shape, [5, 9 * 12]);
    assert!(validate(&slim).is_ok());
}

#[test]
fn staged_plan_matches_one_shot() {
    let g = conv_net(20, 20, 4);
    let one_shot = build_prune_plan(&g, &DEFAULT_SCHEDULE).unwrap();
    let mut staged = PrunePlan::new(&g, &DEFAULT_SCHEDULE).unwrap();
    let mut current = g.clone();
    let dir = tempfile::tempdir().unwrap();
    while !staged.is_complete() {
        staged.next_stage(&current).unwrap();
        let path = dir.path().join("plan.json");
        staged.save(&path).unwrap();
        staged = PrunePlan::load(&path).unwrap();
        current = apply_masks(&current, &staged).unwrap();
    }
    assert_eq!(staged, one_shot);
    assert!(staged.next_stage(&current).is_err());
}

#[test]
fn bad_schedules_and_masks() {
    let g = conv_net(8, 8, 1);
    assert!(PrunePlan::new(&g, &[]).is_err());
    assert!(PrunePlan::new(&g, &[0.0]).is_err());
    assert!(PrunePlan::new(&g, &[0.6, 0.5]).is_err());
    let mut plan = PrunePlan::new(&g, &[0.5]).unwrap();
    plan.masks.get_mut("conv1").unwrap().push(true);
    let err = apply_masks(&g, &plan).unwrap_err().to_string();
    assert!(err.contains("conv1"), "{err}");
}

#[test]
fn checkpoint_roundtrip() {
    let g = conv_net(4, 4, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut tuned = g.clone();
    if let Some(TensorData::F32(w)) = tuned.tensors.get_mut("conv2.w").unwrap().data.as_mut() {
        w[0] = 42.0;
    }
    save_checkpoint(&export_checkpoint(&tuned), &path).unwrap();
    let back = import_checkpoint(&g, &load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(back, tuned);
    let (_, model_blob) = crate::graph::encode_model(&tuned, "m.bin");
    assert_eq!(export_checkpoint(&tuned).blob, model_blob);
}

#[test]
fn checkpoint_errors_name_the_tensor() {
    let g = conv_net(4, 4, 1);
    let base = export_checkpoint(&g);
    let err_for = |ck: &Checkpoint| match import_checkpoint(&g, ck) {
        Err(Error::Checkpoint { tensor, .. }) => tensor,
        other => panic!("expected checkpoint error, got {other:?}"),
    };

    let mut ck = base.clone();
    ck.entries.retain(|e| e.tensor != "conv2.b");
    assert_eq!(err_for(&ck), "conv2.b");

    let mut ck = base.clone();
    ck.entries.iter_mut().find(|e| e.tensor == "fc1.w").unwrap().shape = vec![5, 35];
    assert_eq!(err_for(&ck), "fc1.w");

    let mut ck = base.clone();
    ck.entries.iter_mut().find(|e| e.tensor == "conv1.w").unwrap().dtype = DType::Int8;
    assert_eq!(err_for(&ck), "conv1.w");

    let mut ck = base;
    ck.blob.truncate(ck.blob.len() - 4);
    assert_eq!(err_for(&ck), "fc1.w");
}

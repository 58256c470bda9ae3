use topotensor::pipeline::synthetic::{shuffle_labels, trees_vs_cycles};
use topotensor::pipeline::{finetune, pretrain, RunConfig};

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let ds = shuffle_labels(&trees_vs_cycles(20, 7).unwrap(), 3).unwrap();
    let cfg = RunConfig { dataset: ds.name.clone(), ..RunConfig::default() };
    let pre = pretrain(&cfg, &ds).unwrap();
    let report = finetune(&cfg, &ds, &pre.checkpoint).unwrap();
    assert_eq!(report.fold_accuracies.len(), 10);
    assert!((35.0..=65.0).contains(&report.mean), "mean {}", report.mean);
}

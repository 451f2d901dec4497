use refmix_core::dit::toy::{desk_setup, train_loop};
use refmix_core::dit::{LoraMode, TrainingHyperparams};

#[test]
fn desk_training_halves_loss_deterministically() {
    let hp = TrainingHyperparams::desk_scale();
    let run = |seed| {
        let s = desk_setup(seed, LoraMode::Edit).unwrap();
        assert_eq!(s.batch.len(), hp.batch_size);
        train_loop(&s.params, s.adapter, &s.batch, hp.learning_rate, hp.steps).unwrap()
    };
    let a = run(7);
    let b = run(7);
    let initial = a.losses[0];
    assert!(a.final_loss < 0.5 * initial, "{} -> {}", initial, a.final_loss);
    assert_eq!(a.adapter, b.adapter);
    assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
}

//! Fixtures shared by the benchmarks.

use proxipush::cpm::{LstmShape, MinMaxScaler, TrainingMeta};
use proxipush::world::place_object;
use proxipush::{LstmModel, ModelKind, Pose2, WorkbenchConfig, WorldSpecs, WorldState, SEQ_LEN};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The default box touching the bumper flush.
pub fn box_scene() -> (WorldState, WorldSpecs) {
    let wb = WorkbenchConfig::default();
    let specs = WorldSpecs {
        robot: wb.world.robot,
        object: wb.world.objects[0].clone(),
    };
    let state = place_object(Pose2::new(0.0, 0.0, 0.0), 0.05, 0.0, 0.0, &specs).expect("placement");
    (state, specs)
}

/// A randomly initialised network with identity-width scalers.
pub fn random_model(kind: ModelKind, input: usize, hidden: usize, layers: usize) -> LstmModel {
    let shape = LstmShape {
        input,
        hidden,
        layers,
        outputs: kind.outputs(),
    };
    let params = shape.init(&mut ChaCha8Rng::seed_from_u64(7));
    let unit = || MinMaxScaler::from_bounds(vec![0.0; input], vec![1.0; input]).expect("bounds");
    LstmModel {
        kind,
        seq_len: SEQ_LEN,
        shape,
        params,
        input_scaler: unit(),
        output_scaler: (kind == ModelKind::Cle)
            .then(|| MinMaxScaler::from_bounds(vec![-0.3], vec![0.3]).expect("bounds")),
        meta: TrainingMeta::default(),
    }
}

//! Contact perception: recurrent estimators of contact location and type from
//! a sliding window of descriptor vectors.

mod io;
mod lstm;
mod model;
mod optim;
mod scaler;
mod train;

pub use io::{decode, encode, load_model, save_model, CLASS_LABELS, FORMAT_VERSION};
pub use lstm::{backward, forward, LstmShape, Trace};
pub use model::{Cpm, LstmModel, ModelKind, NormHistory, TrainingMeta};
pub use optim::{argmax, softmax_cross_entropy, squared_error, Adam, AdamConfig};
pub use scaler::MinMaxScaler;
pub use train::{
    batch_gradient, classification_accuracy, location_rmse, train, EpochStats, SequenceDataset,
    TrainConfig, TrainOutcome,
};

/// Length of the input window in 10 Hz ticks.
pub const SEQ_LEN: usize = 20;

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn random_model(kind: ModelKind, hidden: usize, seed: u64) -> LstmModel {
        let shape = LstmShape {
            input: 12,
            hidden,
            layers: 2,
            outputs: kind.outputs(),
        };
        let params = shape.init(&mut ChaCha8Rng::seed_from_u64(seed));
        LstmModel {
            kind,
            seq_len: SEQ_LEN,
            shape,
            params,
            input_scaler: MinMaxScaler::from_bounds(vec![0.0; 12], vec![0.31; 12]).unwrap(),
            output_scaler: (kind == ModelKind::Cle)
                .then(|| MinMaxScaler::from_bounds(vec![-0.3], vec![0.3]).unwrap()),
            meta: TrainingMeta::default(),
        }
    }
}

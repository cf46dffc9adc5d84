//! Sequence classifier: frame embedding, sinusoidal positions, a pre-norm
//! transformer encoder, mean pooling and two heads (7 compound logits, 2
//! valence/arousal sign logits), with hand-written gradients and Adam.

mod adam;
mod checkpoint;
mod encoder;
mod loss;
mod params;
mod tensor;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, quantize, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{forward, ForwardCache, ForwardOutput, LayerCache};
pub use loss::{loss, loss_grad, sigmoid, LossGrad, LossMode, LossWeights, Target};
pub use params::{sinusoidal_table, LayerParams, ModelConfig, ModelParams, FFN_MULT, VA_OUTPUTS};
pub use tensor::{Mat, Scalar};

use crate::error::Result;
use crate::label_space::{ClassScores, VASignPrediction};

/// Loss and all parameter gradients for one sequence.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    out: &ForwardOutput<T>,
    target: &Target,
    mode: LossMode,
    weights: LossWeights,
) -> Result<(T, ModelParams<T>)> {
    let lg = loss_grad(out, target, mode, weights)?;
    let grads = encoder::backward(params, &out.cache, &lg.d_class, &lg.d_va);
    Ok((lg.loss, grads))
}

/// Softmax class scores and sigmoid VA probabilities of one forward pass.
pub fn probabilities<T: Scalar>(out: &ForwardOutput<T>) -> (ClassScores, VASignPrediction) {
    let logits: Vec<f64> = out
        .class_logits
        .iter()
        .map(|z| z.to_f64().unwrap())
        .collect();
    let va: Vec<f64> = out
        .va_logits
        .iter()
        .map(|&z| sigmoid(z).to_f64().unwrap())
        .collect();
    (
        ClassScores::softmax(&logits),
        VASignPrediction {
            p_valence_pos: va[0],
            p_arousal_pos: va[1],
        },
    )
}

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::decoder::Decoder;
use crate::nn::encoder::Encoder;
use crate::nn::init::Initializer;
use crate::nn::{parameters, Parameters};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Encoder + decoder producing per-class logits `[K, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransUnet<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}
parameters!(TransUnet { encoder, decoder });

impl<T: Scalar> TransUnet<T> {
    /// Builds and initializes a model; identical `(config, seed)` give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let encoder = Encoder::new(&mut init, &config);
        let decoder = Decoder::new(&mut init, &config);
        Ok(Self { config, encoder, decoder })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.config.in_channels, self.config.height, self.config.width]
    }

    /// Image `[C,H,W]` to logits `[K,H,W]`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, image: Var) -> Result<Var> {
        if tape.shape(image) != self.input_shape() {
            return Err(config_err!(
                "input {:?} does not match configured {:?}",
                tape.shape(image),
                self.input_shape()
            ));
        }
        let enc = self.encoder.forward(tape, image)?;
        let cfg = &self.config;
        self.decoder
            .forward(tape, enc.tokens, cfg.token_grid(), (cfg.height, cfg.width), enc.skips)
    }

    /// Logits for one image without recording gradients.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(image.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    /// Reads every parameter gradient off `tape` (zeros where a parameter was unused).
    pub fn gather_grads(&self, tape: &Tape<'_, T>) -> Vec<Vec<T>> {
        self.named_parameters()
            .into_iter()
            .map(|(_, p)| {
                tape.param_grad(p)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| alloc::vec![T::ZERO; p.numel()])
            })
            .collect()
    }

    /// Stores gathered gradients into each parameter's gradient slot.
    pub fn store_grads(&mut self, grads: Vec<Vec<T>>) -> Result<()> {
        let params = self.named_parameters_mut();
        if params.len() != grads.len() {
            return Err(Error::Contract(alloc::format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((_, p), g) in params.into_iter().zip(grads) {
            p.set_grad(g)?;
        }
        Ok(())
    }

    /// Overwrites parameters from `(name, shape, data)` records in canonical order.
    /// The first record whose name or shape differs raises a compatibility error.
    pub fn load_parameters(&mut self, records: &[(String, Vec<usize>, Vec<T>)]) -> Result<()> {
        let params = self.named_parameters_mut();
        for (i, (name, p)) in params.iter().enumerate() {
            let Some((rname, rshape, _)) = records.get(i) else {
                return Err(Error::Compatibility(alloc::format!(
                    "checkpoint has no entry for parameter '{name}'"
                )));
            };
            if rname != name || rshape[..] != *p.shape() {
                return Err(Error::Compatibility(alloc::format!(
                    "parameter '{name}' {:?} does not match checkpoint entry '{rname}' {:?}",
                    p.shape(),
                    rshape
                )));
            }
        }
        if records.len() != params.len() {
            return Err(Error::Compatibility(alloc::format!(
                "checkpoint has {} parameters, model expects {}; first extra is '{}'",
                records.len(),
                params.len(),
                records[params.len()].0
            )));
        }
        for ((_, p), (_, _, data)) in params.into_iter().zip(records) {
            p.data_mut().copy_from_slice(data);
        }
        Ok(())
    }

    /// Same architecture and weights in another element type.
    pub fn cast<U: Scalar>(&self) -> TransUnet<U> {
        let mut out = TransUnet::<U>::new(self.config.clone(), 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.named_parameters_mut().into_iter().zip(self.named_parameters()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = U::from_f64(s.to_f64());
            }
        }
        out
    }
}

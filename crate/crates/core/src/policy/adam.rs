//! ADAM optimizer state over a flat parameter vector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{BinReader, BinWriter};
use crate::error::{ensure, Result};

const MAGIC: &[u8; 4] = b"HLAD";
const MAX_PARAMS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.m.len() && grad.len() == self.m.len(),
            "optimizer holds {} moments, got {} params and {} gradients",
            self.m.len(),
            params.len(),
            grad.len()
        );
        self.step += 1;
        let c1 = 1.0 - self.beta1.powf(self.step as f64);
        let c2 = 1.0 - self.beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.magic(MAGIC, 1)?;
        w.u64(self.step)?;
        w.f64(self.learning_rate)?;
        w.f64(self.beta1)?;
        w.f64(self.beta2)?;
        w.f64(self.epsilon)?;
        w.f64_vec(&self.m)?;
        w.f64_vec(&self.v)?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.expect_magic(MAGIC, 1)?;
        let step = r.u64()?;
        let learning_rate = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let epsilon = r.f64()?;
        let m = r.f64_vec(MAX_PARAMS)?;
        let v = r.f64_vec(MAX_PARAMS)?;
        if m.len() != v.len() {
            return Err(r.bad("moment vectors differ in length"));
        }
        r.expect_eof()?;
        Ok(Self {
            m,
            v,
            step,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }
}

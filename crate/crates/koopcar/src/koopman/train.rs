//! Offline training of the lifted-space model.
//!
//! All learning runs in normalized coordinates: the lifted state used
//! internally is [x_scaled; phi(x_scaled)], which keeps every channel
//! O(1). `finalize` conjugates the learned matrices by the (purely
//! linear, symmetric) state normalization so the shipped model acts on
//! the raw top block.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{GradBuffer, MinMaxScaler, Mlp, Momentum};

use super::{
    input_to_vec, state_to_vec, KoopmanDims, KoopmanModel, Sequence, Split, TrainingConfig,
    TrajectoryDataset,
};

const LR_PLATEAU_PATIENCE: usize = 10;
const MOMENTUM_COEFF: f64 = 0.9;

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// A sequence pre-scaled into normalized coordinates; columns are steps.
pub struct ScaledSeq {
    /// n x (p+1)
    pub xs: DMatrix<f64>,
    /// m x p
    pub us: DMatrix<f64>,
}

pub struct TrainerGrads {
    pub encoder: GradBuffer,
    pub decoder: GradBuffer,
    pub a: GradBuffer,
    pub b: GradBuffer,
}

/// Training-time model: encoder/decoder nets plus the lifted system
/// matrices held as single linear layers without bias.
pub struct KoopmanTrainer {
    pub dims: KoopmanDims,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub a_net: Mlp,
    pub b_net: Mlp,
    pub scaler_x: MinMaxScaler,
    pub scaler_u: MinMaxScaler,
}

impl KoopmanTrainer {
    pub fn new(
        dims: KoopmanDims,
        hidden: &[usize],
        scaler_x: MinMaxScaler,
        scaler_u: MinMaxScaler,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let q = dims.q();
        KoopmanTrainer {
            dims,
            encoder: Mlp::feedforward(dims.n, hidden, dims.phi, rng),
            decoder: Mlp::feedforward(dims.phi, hidden, dims.n, rng),
            a_net: Mlp::linear_no_bias(q, q, rng),
            b_net: Mlp::linear_no_bias(dims.m, q, rng),
            scaler_x,
            scaler_u,
        }
    }

    pub fn scale_sequence(&self, seq: &Sequence) -> ScaledSeq {
        let p = seq.inputs.len();
        let mut xs = DMatrix::zeros(self.dims.n, p + 1);
        for (j, s) in seq.states.iter().enumerate() {
            xs.set_column(j, &self.scaler_x.apply(&state_to_vec(s)));
        }
        let mut us = DMatrix::zeros(self.dims.m, p);
        for (j, u) in seq.inputs.iter().enumerate() {
            us.set_column(j, &self.scaler_u.apply(&input_to_vec(u)));
        }
        ScaledSeq { xs, us }
    }

    fn gather(batch: &[&ScaledSeq], rows: usize, col: usize, from_inputs: bool) -> DMatrix<f64> {
        DMatrix::from_fn(rows, batch.len(), |r, c| {
            if from_inputs {
                batch[c].us[(r, col)]
            } else {
                batch[c].xs[(r, col)]
            }
        })
    }

    /// Composite loss of a batch, averaged per sequence: (L, L_pred, L_recon).
    pub fn loss_scaled(&self, batch: &[&ScaledSeq]) -> Result<(f64, f64, f64)> {
        let (l, l1, l2, _) = self.eval_batch(batch, false)?;
        Ok((l, l1, l2))
    }

    /// Loss and exact reverse-mode gradients of the batch loss.
    pub fn grads_scaled(&self, batch: &[&ScaledSeq]) -> Result<((f64, f64, f64), TrainerGrads)> {
        let (l, l1, l2, grads) = self.eval_batch(batch, true)?;
        Ok(((l, l1, l2), grads.expect("grads requested")))
    }

    fn eval_batch(
        &self,
        batch: &[&ScaledSeq],
        with_grads: bool,
    ) -> Result<(f64, f64, f64, Option<TrainerGrads>)> {
        let bsz = batch.len();
        if bsz == 0 {
            return Err(Error::EmptyData("empty batch".into()));
        }
        let n = self.dims.n;
        let phi = self.dims.phi;
        let q = self.dims.q();
        let p = batch[0].us.ncols();
        let inv_b = 1.0 / bsz as f64;
        let a = &self.a_net.layers[0].weight;
        let b = &self.b_net.layers[0].weight;

        // Encoder on every step of every sequence.
        let mut x_steps = Vec::with_capacity(p + 1);
        let mut enc_caches = Vec::with_capacity(p + 1);
        for j in 0..=p {
            let xj = Self::gather(batch, n, j, false);
            enc_caches.push(self.encoder.forward_batch(&xj)?);
            x_steps.push(xj);
        }

        // Lifted recursion, never re-lifting intermediate predictions.
        let mut z_steps: Vec<DMatrix<f64>> = Vec::with_capacity(p + 1);
        let mut z0 = DMatrix::zeros(q, bsz);
        z0.view_mut((0, 0), (n, bsz)).copy_from(&x_steps[0]);
        z0.view_mut((n, 0), (phi, bsz))
            .copy_from(enc_caches[0].output());
        z_steps.push(z0);
        let mut u_steps = Vec::with_capacity(p);
        let mut errors = Vec::with_capacity(p);
        let mut l1 = 0.0;
        for i in 1..=p {
            let ui = Self::gather(batch, self.dims.m, i - 1, true);
            let zi = a * &z_steps[i - 1] + b * &ui;
            let ei = zi.view((0, 0), (n, bsz)) - &x_steps[i];
            l1 += ei.norm_squared();
            u_steps.push(ui);
            z_steps.push(zi);
            errors.push(ei);
        }
        l1 *= inv_b;

        // Reconstruction of every step through the decoder.
        let mut dec_caches = Vec::with_capacity(p + 1);
        let mut recon_errors = Vec::with_capacity(p + 1);
        let mut l2 = 0.0;
        for j in 0..=p {
            let cache = self.decoder.forward_batch(enc_caches[j].output())?;
            let rj = cache.output() - &x_steps[j];
            l2 += rj.norm_squared();
            dec_caches.push(cache);
            recon_errors.push(rj);
        }
        l2 *= inv_b;
        let l = l1 + l2;

        if !with_grads {
            return Ok((l, l1, l2, None));
        }

        let mut enc_grads = GradBuffer::zeros_like(&self.encoder);
        let mut dec_grads = GradBuffer::zeros_like(&self.decoder);
        let mut a_grads = GradBuffer::zeros_like(&self.a_net);
        let mut b_grads = GradBuffer::zeros_like(&self.b_net);

        // Prediction path: walk the recursion backwards, accumulating into
        // A, B and the step-0 lifted state.
        let mut cot = DMatrix::zeros(q, bsz);
        for i in (1..=p).rev() {
            cot.view_mut((0, 0), (n, bsz))
                .zip_apply(&errors[i - 1], |c, e| *c += 2.0 * inv_b * e);
            a_grads.d_weights[0] += &cot * z_steps[i - 1].transpose();
            b_grads.d_weights[0] += &cot * u_steps[i - 1].transpose();
            cot = a.transpose() * cot;
        }
        let dphi_pred = cot.view((n, 0), (phi, bsz)).into_owned();

        // Reconstruction path through the decoder, then both paths through
        // the encoder.
        for j in 0..=p {
            let mut cot_recon = recon_errors[j].clone();
            cot_recon *= 2.0 * inv_b;
            let (dg, mut dphi) = self.decoder.backward_batch(&dec_caches[j], &cot_recon)?;
            dec_grads.add_assign(&dg);
            if j == 0 {
                dphi += &dphi_pred;
            }
            let (eg, _) = self.encoder.backward_batch(&enc_caches[j], &dphi)?;
            enc_grads.add_assign(&eg);
        }

        Ok((
            l,
            l1,
            l2,
            Some(TrainerGrads {
                encoder: enc_grads,
                decoder: dec_grads,
                a: a_grads,
                b: b_grads,
            }),
        ))
    }

    /// Fold the state normalization into the system matrices and ship the
    /// model acting on raw top-block coordinates.
    pub fn finalize(&self) -> KoopmanModel {
        let q = self.dims.q();
        let mut d = DVector::from_element(q, 1.0);
        for i in 0..self.dims.n {
            d[i] = self.scaler_x.gain(i);
        }
        let a_bar = &self.a_net.layers[0].weight;
        let b_bar = &self.b_net.layers[0].weight;
        let a = DMatrix::from_fn(q, q, |i, j| a_bar[(i, j)] * d[j] / d[i]);
        let b = DMatrix::from_fn(q, self.dims.m, |i, j| b_bar[(i, j)] / d[i]);
        KoopmanModel {
            dims: self.dims,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            a,
            b,
            scaler_x: self.scaler_x.clone(),
            scaler_u: self.scaler_u.clone(),
        }
    }

    // Flat parameter access across [encoder, decoder, A, B], used by
    // finite-difference checks.

    fn nets(&self) -> [&Mlp; 4] {
        [&self.encoder, &self.decoder, &self.a_net, &self.b_net]
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let (net_idx, off) = self.locate(idx);
        self.nets()[net_idx].get_param(off)
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let (net_idx, off) = self.locate(idx);
        match net_idx {
            0 => self.encoder.set_param(off, v),
            1 => self.decoder.set_param(off, v),
            2 => self.a_net.set_param(off, v),
            _ => self.b_net.set_param(off, v),
        }
    }

    pub fn grad_param(&self, grads: &TrainerGrads, idx: usize) -> f64 {
        let (net_idx, off) = self.locate(idx);
        match net_idx {
            0 => Mlp::grad_param(&grads.encoder, &self.encoder, off),
            1 => Mlp::grad_param(&grads.decoder, &self.decoder, off),
            2 => Mlp::grad_param(&grads.a, &self.a_net, off),
            _ => Mlp::grad_param(&grads.b, &self.b_net, off),
        }
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (i, net) in self.nets().iter().enumerate() {
            let c = net.param_count();
            if idx < c {
                return (i, idx);
            }
            idx -= c;
        }
        panic!("parameter index out of range");
    }
}

struct Updater {
    momentum: Option<[Momentum; 4]>,
}

impl Updater {
    fn new(trainer: &KoopmanTrainer, use_momentum: bool) -> Self {
        Updater {
            momentum: use_momentum.then(|| {
                [
                    Momentum::new(&trainer.encoder, MOMENTUM_COEFF),
                    Momentum::new(&trainer.decoder, MOMENTUM_COEFF),
                    Momentum::new(&trainer.a_net, MOMENTUM_COEFF),
                    Momentum::new(&trainer.b_net, MOMENTUM_COEFF),
                ]
            }),
        }
    }

    fn apply(&mut self, trainer: &mut KoopmanTrainer, grads: &TrainerGrads, lr: f64) {
        match &mut self.momentum {
            Some([me, md, ma, mb]) => {
                me.step(&mut trainer.encoder, &grads.encoder, lr);
                md.step(&mut trainer.decoder, &grads.decoder, lr);
                ma.step(&mut trainer.a_net, &grads.a, lr);
                mb.step(&mut trainer.b_net, &grads.b, lr);
            }
            None => {
                trainer.encoder.sgd_step(&grads.encoder, lr);
                trainer.decoder.sgd_step(&grads.decoder, lr);
                trainer.a_net.sgd_step(&grads.a, lr);
                trainer.b_net.sgd_step(&grads.b, lr);
            }
        }
    }
}

fn fit_symmetric_scalers(
    dataset: &TrajectoryDataset,
    train_idx: &[usize],
) -> Result<(MinMaxScaler, MinMaxScaler)> {
    let n_states: usize = train_idx
        .iter()
        .map(|&i| dataset.sequences[i].states.len())
        .sum();
    let n_inputs: usize = train_idx
        .iter()
        .map(|&i| dataset.sequences[i].inputs.len())
        .sum();
    let mut xs = DMatrix::zeros(3, n_states);
    let mut us = DMatrix::zeros(2, n_inputs);
    let (mut cx, mut cu) = (0, 0);
    for &i in train_idx {
        for s in &dataset.sequences[i].states {
            xs.set_column(cx, &state_to_vec(s));
            cx += 1;
        }
        for u in &dataset.sequences[i].inputs {
            us.set_column(cu, &input_to_vec(u));
            cu += 1;
        }
    }
    Ok((
        MinMaxScaler::fit(&xs)?.symmetrized(),
        MinMaxScaler::fit(&us)?.symmetrized(),
    ))
}

/// Train a lifted-space model on the dataset. Sequences tagged
/// `Validation` are held out; if the dataset carries no tags, a seeded
/// `val_fraction` split is drawn.
pub fn train(
    dataset: &TrajectoryDataset,
    cfg: &TrainingConfig,
) -> Result<(KoopmanModel, TrainHistory)> {
    cfg.validate()?;
    dataset.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let tagged = dataset.sequences.iter().any(|s| s.split == Split::Validation);
    let (train_idx, val_idx) = if tagged {
        let tr: Vec<usize> = (0..dataset.sequences.len())
            .filter(|&i| dataset.sequences[i].split == Split::Train)
            .collect();
        let va: Vec<usize> = (0..dataset.sequences.len())
            .filter(|&i| dataset.sequences[i].split == Split::Validation)
            .collect();
        (tr, va)
    } else {
        let mut idx: Vec<usize> = (0..dataset.sequences.len()).collect();
        idx.shuffle(&mut rng);
        let n_val = ((dataset.sequences.len() as f64 * cfg.val_fraction).ceil() as usize).max(1);
        let va = idx[..n_val.min(idx.len() - 1)].to_vec();
        let tr = idx[n_val.min(idx.len() - 1)..].to_vec();
        (tr, va)
    };
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::EmptyData(
            "dataset must provide both training and validation sequences".into(),
        ));
    }

    let (scaler_x, scaler_u) = fit_symmetric_scalers(dataset, &train_idx)?;
    let dims = KoopmanDims::new(cfg.p_phi);
    let hidden = vec![cfg.hidden_units; cfg.hidden_layers];
    let mut trainer = KoopmanTrainer::new(dims, &hidden, scaler_x, scaler_u, &mut rng);

    let scaled: Vec<ScaledSeq> = dataset
        .sequences
        .iter()
        .map(|s| trainer.scale_sequence(s))
        .collect();

    let mut updater = Updater::new(&trainer, cfg.use_momentum);
    let mut lr = cfg.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut patience = 0usize;
    let mut history = TrainHistory::default();
    let mut order = train_idx.clone();

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ScaledSeq> = chunk.iter().map(|&i| &scaled[i]).collect();
            let ((l, _, _), grads) = trainer.grads_scaled(&batch)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("batch loss = {l}")));
            }
            epoch_loss += l * batch.len() as f64;
            updater.apply(&mut trainer, &grads, lr);
        }
        let train_loss = epoch_loss / train_idx.len() as f64;

        let mut val_loss = 0.0;
        for chunk in val_idx.chunks(cfg.batch_size) {
            let batch: Vec<&ScaledSeq> = chunk.iter().map(|&i| &scaled[i]).collect();
            let (l, _, _) = trainer.loss_scaled(&batch)?;
            val_loss += l * batch.len() as f64;
        }
        val_loss /= val_idx.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss = {val_loss}")));
        }

        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);

        if val_loss < best_val - 1e-12 {
            best_val = val_loss;
            patience = 0;
        } else {
            patience += 1;
            if patience >= LR_PLATEAU_PATIENCE {
                lr *= 0.5;
                patience = 0;
            }
        }
    }

    let model = trainer.finalize();
    model.validate()?;
    Ok((model, history))
}

//! Versioned structured-text model checkpoint.
//!
//! JSON document with fixed field names: version, dims{n,m,phi},
//! scaler_x{min,max}, scaler_u{min,max}, encoder[], decoder[], A[][],
//! B[][], training. Layer weights are row-major 64-bit floats in decimal
//! text; serialization uses shortest round-trip formatting, so a
//! save/load cycle reproduces predictions bit for bit.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, MinMaxScaler, Mlp};

use super::{KoopmanDims, KoopmanModel, TrainingConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    /// Row-major weight entries.
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct ScalerDoc {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    dims: KoopmanDims,
    scaler_x: ScalerDoc,
    scaler_u: ScalerDoc,
    encoder: Vec<LayerDoc>,
    decoder: Vec<LayerDoc>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(default)]
    training: Option<TrainingConfig>,
}

fn layer_to_doc(layer: &Layer) -> LayerDoc {
    let (rows, cols) = layer.weight.shape();
    let mut weights = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            weights.push(layer.weight[(r, c)]);
        }
    }
    LayerDoc {
        rows,
        cols,
        weights,
        bias: layer.bias.as_ref().map(|b| b.as_slice().to_vec()),
        activation: layer.activation,
    }
}

fn layer_from_doc(doc: &LayerDoc) -> Result<Layer> {
    if doc.weights.len() != doc.rows * doc.cols {
        return Err(Error::Checkpoint(format!(
            "layer weight count {} does not match {}x{}",
            doc.weights.len(),
            doc.rows,
            doc.cols
        )));
    }
    if let Some(b) = &doc.bias {
        if b.len() != doc.rows {
            return Err(Error::Checkpoint("layer bias length mismatch".into()));
        }
    }
    Ok(Layer {
        weight: DMatrix::from_row_slice(doc.rows, doc.cols, &doc.weights),
        bias: doc.bias.as_ref().map(|b| DVector::from_column_slice(b)),
        activation: doc.activation,
    })
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Checkpoint(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn save_checkpoint(
    model: &KoopmanModel,
    training: Option<&TrainingConfig>,
    path: &Path,
) -> Result<()> {
    model.validate()?;
    let doc = CheckpointDoc {
        version: CHECKPOINT_VERSION,
        dims: model.dims,
        scaler_x: ScalerDoc {
            min: model.scaler_x.min.as_slice().to_vec(),
            max: model.scaler_x.max.as_slice().to_vec(),
        },
        scaler_u: ScalerDoc {
            min: model.scaler_u.min.as_slice().to_vec(),
            max: model.scaler_u.max.as_slice().to_vec(),
        },
        encoder: model.encoder.layers.iter().map(layer_to_doc).collect(),
        decoder: model.decoder.layers.iter().map(layer_to_doc).collect(),
        a: matrix_to_rows(&model.a),
        b: matrix_to_rows(&model.b),
        training: training.copied(),
    };
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Checkpoint(format!("encode: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(KoopmanModel, Option<TrainingConfig>)> {
    let text = std::fs::read_to_string(path)?;
    let doc: CheckpointDoc =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("decode: {e}")))?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            doc.version
        )));
    }
    let q = doc.dims.q();
    let model = KoopmanModel {
        dims: doc.dims,
        encoder: Mlp {
            layers: doc
                .encoder
                .iter()
                .map(layer_from_doc)
                .collect::<Result<Vec<_>>>()?,
        },
        decoder: Mlp {
            layers: doc
                .decoder
                .iter()
                .map(layer_from_doc)
                .collect::<Result<Vec<_>>>()?,
        },
        a: matrix_from_rows(&doc.a, q, q, "A")?,
        b: matrix_from_rows(&doc.b, q, doc.dims.m, "B")?,
        scaler_x: MinMaxScaler {
            min: DVector::from_column_slice(&doc.scaler_x.min),
            max: DVector::from_column_slice(&doc.scaler_x.max),
        },
        scaler_u: MinMaxScaler {
            min: DVector::from_column_slice(&doc.scaler_u.min),
            max: DVector::from_column_slice(&doc.scaler_u.max),
        },
    };
    model.validate()?;
    Ok((model, doc.training))
}

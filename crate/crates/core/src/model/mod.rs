//! Sparse design matrices, penalised logistic fitting, the outer search over
//! nonlinear parameters, and prediction.

mod catalog;
mod design;
mod fit;
mod io;
mod lbfgs;
mod predict;

use std::sync::Arc;

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::event_log::InteractionEvent;
use crate::features::{FeatureSpec, Featurizer, SparseRow, StudentHistory};

pub use catalog::{build_catalog, ColumnCatalog, InstanceKey};
pub use design::{vectorize, DesignMatrix, RowStream};
pub use fit::{design_predictions, fit_linear, fit_model, fit_nonlinear, LinearFit, TrainingRun};
pub use io::{export_text, load_model, save_model, MODEL_MAGIC};
pub use predict::{batched_predict, LabelPolicy, Predictor};

pub(crate) use fit::sigmoid;

pub const PROB_FLOOR: f64 = 1e-7;

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// One probe of the outer parameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterProbe {
    pub cycle: usize,
    pub descriptor: usize,
    pub value: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitDiagnostics {
    /// Training mean log-loss of the returned coefficients.
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Penalised objective after each accepted optimiser step.
    pub loss_history: Vec<f64>,
    pub outer_trace: Vec<OuterProbe>,
}

/// Coefficients bound to the spec, catalog and cluster model they index.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub bias: f64,
    pub coefficients: Vec<f64>,
    featurizer: Featurizer,
    catalog: ColumnCatalog,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn new(featurizer: Featurizer, catalog: ColumnCatalog, bias: f64, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != catalog.len() {
            return Err(Error::Model(format!(
                "{} coefficients for {} catalog columns",
                coefficients.len(),
                catalog.len()
            )));
        }
        if catalog.descriptor_count() != featurizer.spec().len() {
            return Err(Error::Model("catalog was built for a different spec".into()));
        }
        if !bias.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Model("non-finite coefficient".into()));
        }
        Ok(FittedModel {
            bias,
            coefficients,
            featurizer,
            catalog,
            diagnostics: FitDiagnostics::default(),
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        self.featurizer.spec()
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn catalog(&self) -> &ColumnCatalog {
        &self.catalog
    }

    pub fn clusters(&self) -> Option<&Arc<ClusterModel>> {
        self.featurizer.clusters()
    }

    /// `(descriptor index, parameter name, value)` for each nonlinear
    /// parameter.
    pub fn nonlinear_params(&self) -> Vec<(usize, &'static str, f64)> {
        self.spec()
            .nonlinear_indices()
            .into_iter()
            .map(|i| {
                let d = &self.spec().descriptors()[i];
                (i, d.kind.param_name().expect("nonlinear"), d.param.expect("validated"))
            })
            .collect()
    }

    /// Linear predictor for a feature row.
    pub fn score_row(&self, row: &SparseRow) -> Result<f64> {
        let mut z = self.bias;
        for &(c, v) in row {
            let beta = self
                .coefficients
                .get(c as usize)
                .ok_or_else(|| Error::Model(format!("column {c} outside the model")))?;
            z += beta * v;
        }
        Ok(z)
    }

    /// Probability of a correct answer given the student's prior history.
    pub fn predict(&self, history: &StudentHistory, event: &InteractionEvent) -> Result<f64> {
        let row = self.featurizer.featurize(history, event, &self.catalog)?;
        Ok(clamp_probability(sigmoid(self.score_row(&row)?)))
    }

    /// Experimental: multiplies the coefficients of one instanced descriptor
    /// (e.g. combo intercepts) by `factor`. Not used by any fitting path.
    pub fn scale_instance_coefficients(&mut self, descriptor: usize, factor: f64) -> Result<()> {
        let d = self
            .spec()
            .descriptors()
            .get(descriptor)
            .ok_or_else(|| Error::param(format!("no descriptor {descriptor}")))?;
        if !d.is_instanced() {
            return Err(Error::param(format!("descriptor {descriptor} has no instance columns")));
        }
        let prefix = format!("{}[", d.label());
        for (c, name) in self.catalog.names().iter().enumerate() {
            if name.starts_with(&prefix) {
                self.coefficients[c] *= factor;
            }
        }
        Ok(())
    }
}

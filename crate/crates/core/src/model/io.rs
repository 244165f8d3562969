//! Model files: magic, version, spec text, cluster model, catalog,
//! coefficients and fit diagnostics, all little endian.

use std::io::{Read, Write};

use super::{ColumnCatalog, FitDiagnostics, FittedModel, OuterProbe};
use crate::clustering::ClusterModel;
use crate::codec::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::features::{read_combo, write_combo, FeatureSpec, Featurizer};

pub const MODEL_MAGIC: &[u8; 8] = b"LKTMODEL";
const MODEL_VERSION: u32 = 1;

pub fn save_model<W: Write>(model: &FittedModel, out: W) -> Result<()> {
    let mut w = BinWriter::new(out);
    w.bytes(MODEL_MAGIC)?;
    w.u32(MODEL_VERSION)?;
    w.str(&model.spec().to_text())?;
    match model.clusters() {
        None => w.u8(0)?,
        Some(c) => {
            w.u8(1)?;
            w.len(c.k())?;
            w.len(c.combos().len())?;
            for (i, combo) in c.combos().iter().enumerate() {
                write_combo(&mut w, combo)?;
                for &v in c.membership_row(i) {
                    w.f64(v)?;
                }
            }
        }
    }
    model.catalog().write_to(&mut w)?;
    w.f64(model.bias)?;
    w.len(model.coefficients.len())?;
    for &c in &model.coefficients {
        w.f64(c)?;
    }
    let d = &model.diagnostics;
    w.f64(d.final_loss)?;
    w.u64(d.iterations as u64)?;
    w.u8(d.converged as u8)?;
    w.f64(d.grad_norm)?;
    w.len(d.loss_history.len())?;
    for &v in &d.loss_history {
        w.f64(v)?;
    }
    w.len(d.outer_trace.len())?;
    for p in &d.outer_trace {
        w.u64(p.cycle as u64)?;
        w.u64(p.descriptor as u64)?;
        w.f64(p.value)?;
        w.f64(p.loss)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn load_model<R: Read>(input: R) -> Result<FittedModel> {
    let mut r = BinReader::new(input);
    let version = r.expect_magic(MODEL_MAGIC, "model file")?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let spec = FeatureSpec::parse(&r.str()?)?;
    let clusters = match r.u8()? {
        0 => None,
        1 => {
            let k = r.len()?;
            let n = r.len()?;
            let mut combos = Vec::with_capacity(n);
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                combos.push(read_combo(&mut r)?);
                let mut row = Vec::with_capacity(k);
                for _ in 0..k {
                    row.push(r.f64()?);
                }
                rows.push(row);
            }
            Some(ClusterModel::from_rows(combos, k, rows)?.into_shared())
        }
        t => return Err(Error::Format(format!("bad cluster tag {t}"))),
    };
    let featurizer = Featurizer::new(spec, clusters)?;
    let catalog = ColumnCatalog::read_from(&mut r)?;
    let bias = r.f64()?;
    let n = r.len()?;
    let mut coefficients = Vec::with_capacity(n);
    for _ in 0..n {
        coefficients.push(r.f64()?);
    }
    let mut model = FittedModel::new(featurizer, catalog, bias, coefficients)?;
    let final_loss = r.f64()?;
    let iterations = r.u64()? as usize;
    let converged = r.u8()? != 0;
    let grad_norm = r.f64()?;
    let mut loss_history = Vec::new();
    for _ in 0..r.len()? {
        loss_history.push(r.f64()?);
    }
    let mut outer_trace = Vec::new();
    for _ in 0..r.len()? {
        outer_trace.push(OuterProbe {
            cycle: r.u64()? as usize,
            descriptor: r.u64()? as usize,
            value: r.f64()?,
            loss: r.f64()?,
        });
    }
    model.diagnostics = FitDiagnostics {
        final_loss,
        iterations,
        converged,
        grad_norm,
        loss_history,
        outer_trace,
    };
    Ok(model)
}

/// Tab-separated `column<TAB>coefficient` listing, bias first.
pub fn export_text<W: Write>(model: &FittedModel, mut out: W) -> Result<()> {
    writeln!(out, "column\tcoefficient")?;
    writeln!(out, "(bias)\t{:?}", model.bias)?;
    for (name, c) in model.catalog().names().iter().zip(&model.coefficients) {
        writeln!(out, "{name}\t{c:?}")?;
    }
    for (i, name, v) in model.nonlinear_params() {
        writeln!(out, "# {} {name} = {v:?}", model.spec().descriptors()[i].label())?;
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, Mlp};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Real;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Real")]
struct Document<T> {
    arch: ArchSpec,
    params: BTreeMap<String, Vec<Vec<T>>>,
}

fn to_rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<T>> {
    if t.rank() == 2 {
        (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
    } else {
        vec![t.to_vec()]
    }
}

fn mismatch(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Error {
    Error::Checkpoint {
        field: field.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

fn check_arch(expected: &ArchSpec, found: &ArchSpec) -> Result<()> {
    if expected.kind != found.kind {
        return Err(mismatch("arch.kind", format!("{:?}", expected.kind), format!("{:?}", found.kind)));
    }
    if expected.num_layers() != found.num_layers() {
        return Err(mismatch(
            "arch.layers",
            format!("{} layers", expected.num_layers()),
            format!("{} layers", found.num_layers()),
        ));
    }
    if expected.widths != found.widths {
        return Err(mismatch(
            "arch.widths",
            format!("{:?}", expected.widths),
            format!("{:?}", found.widths),
        ));
    }
    if expected != found {
        return Err(mismatch(
            "arch",
            serde_json::to_string(expected).unwrap_or_default(),
            serde_json::to_string(found).unwrap_or_default(),
        ));
    }
    Ok(())
}

impl<T: Real> Mlp<T> {
    /// Checkpoint document as JSON text.
    pub fn to_json(&self) -> String {
        let params = self
            .param_names()
            .into_iter()
            .zip(self.params())
            .map(|(name, p)| (name, to_rows(p)))
            .collect();
        let doc = Document {
            arch: self.arch.clone(),
            params,
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
    }

    /// Parses a checkpoint document; `expected` additionally pins the
    /// architecture.
    pub fn from_json(text: &str, expected: Option<&ArchSpec>) -> Result<Self> {
        let doc: Document<T> =
            serde_json::from_str(text).map_err(|e| Error::json("<checkpoint>", e))?;
        Self::from_document(doc, expected)
    }

    fn from_document(mut doc: Document<T>, expected: Option<&ArchSpec>) -> Result<Self> {
        if let Some(exp) = expected {
            check_arch(exp, &doc.arch)?;
        }
        doc.arch
            .validate()
            .map_err(|e| mismatch("arch", "a valid architecture", e))?;
        // Template with the right names and shapes; values are replaced below.
        let template = Mlp::<T>::build(&doc.arch, 0)?;
        let mut params = Vec::new();
        for (name, shape) in template
            .param_names()
            .into_iter()
            .zip(template.params().iter().map(|p| p.shape().to_vec()))
        {
            let field = format!("params.{name}");
            let rows = doc.params.remove(&name).ok_or_else(|| mismatch(&field, "present", "missing"))?;
            let found: Vec<usize> = vec![rows.len(), rows.first().map_or(0, Vec::len)];
            let want: Vec<usize> = if shape.len() == 2 { shape.clone() } else { vec![1, shape[0]] };
            if found != want || rows.iter().any(|r| r.len() != want[1]) {
                return Err(mismatch(field, format!("{want:?}"), format!("{found:?}")));
            }
            let data: Vec<T> = rows.into_iter().flatten().collect();
            if data.iter().any(|x| !x.is_finite()) {
                return Err(mismatch(field, "finite values", "non-finite value"));
            }
            params.push(Tensor::new(shape, data)?);
        }
        if let Some(extra) = doc.params.keys().next() {
            return Err(mismatch(format!("params.{extra}"), "absent", "present"));
        }
        Mlp::from_parts(doc.arch, params)
    }
}

/// Writes `net` as JSON (atomically: temporary file then rename).
pub fn save_checkpoint<T: Real>(net: &Mlp<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), net.to_json().as_bytes())
}

/// Reads a checkpoint written by [`save_checkpoint`]. With `expected` set, a
/// different architecture is rejected naming the first differing field.
pub fn load_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    expected: Option<&ArchSpec>,
) -> Result<Mlp<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Document<T> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Mlp::from_document(doc, expected)
}

//! On-disk model descriptors (JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loopnest::{Attrs, KernelClassId, KernelSpec, OpKind, Role, Shape};
use crate::transfer::{ModelDescriptor, ModelKernel};

/// Largest accepted sum of supplied class proportions (rounding slack).
pub const PROPORTION_SUM_LIMIT: f64 = 1.05;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("{source_name}: {field}: {message}")]
    Invalid {
        source_name: String,
        field: String,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DescriptorError {
    /// JSON path of the offending field, if the error is a validation error.
    pub fn field(&self) -> Option<&str> {
        match self {
            DescriptorError::Invalid { field, .. } => Some(field),
            DescriptorError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    kernels: Vec<KernelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_proportions: Option<BTreeMap<KernelClassId, f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    untuned_costs: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tuning_model: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    heuristic_choices: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<KernelClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ops: Option<Vec<OpKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shapes: Option<ShapesEntry>,
    #[serde(default, skip_serializing_if = "is_default_attrs")]
    attrs: Attrs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    use_count: Option<usize>,
}

/// Per-role shapes; a struct rather than a map so errors carry the role.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapesEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addend: Option<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<Shape>,
}

impl ShapesEntry {
    fn into_map(self) -> BTreeMap<Role, Shape> {
        [
            (Role::Input, self.input),
            (Role::Weights, self.weights),
            (Role::Bias, self.bias),
            (Role::Addend, self.addend),
            (Role::Output, self.output),
        ]
        .into_iter()
        .filter_map(|(r, s)| s.map(|s| (r, s)))
        .collect()
    }

    fn inputs_of(spec: &KernelSpec) -> ShapesEntry {
        let get = |r| spec.shape(r).cloned();
        ShapesEntry {
            input: get(Role::Input),
            weights: get(Role::Weights),
            bias: get(Role::Bias),
            addend: get(Role::Addend),
            output: None,
        }
    }
}

fn is_default_attrs(a: &Attrs) -> bool {
    *a == Attrs::default()
}

pub fn load_descriptor(path: impl AsRef<Path>) -> Result<ModelDescriptor, DescriptorError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DescriptorError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_descriptor(&text, &path.display().to_string())
}

/// Every `*.json` descriptor in `dir`, keyed by file stem, in file-name order.
pub fn load_library(
    dir: impl AsRef<Path>,
) -> Result<Vec<(String, ModelDescriptor)>, DescriptorError> {
    let dir = dir.as_ref();
    let io = |source| DescriptorError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((stem, load_descriptor(&p)?))
        })
        .collect()
}

fn loose(s: &str) -> String {
    s.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Looks a model up by file stem or name, ignoring case and punctuation
/// (`mnasnet1_0` finds `MnasNet1.0`).
pub fn find_model<'a>(
    library: &'a [(String, ModelDescriptor)],
    key: &str,
) -> Option<&'a ModelDescriptor> {
    let k = loose(key);
    library
        .iter()
        .find(|(stem, m)| loose(stem) == k || loose(&m.name) == k)
        .map(|(_, m)| m)
}

/// Parses and validates a descriptor; `source_name` only labels errors.
pub fn parse_descriptor(text: &str, source_name: &str) -> Result<ModelDescriptor, DescriptorError> {
    let invalid = |field: String, message: String| DescriptorError::Invalid {
        source_name: source_name.to_string(),
        field,
        message,
    };
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: DescriptorFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        invalid(field, e.into_inner().to_string())
    })?;
    if file.name.trim().is_empty() {
        return Err(invalid("name".into(), "must not be empty".into()));
    }
    if file.kernels.is_empty() {
        return Err(invalid("kernels".into(), "must list at least one kernel".into()));
    }
    let mut kernels = Vec::with_capacity(file.kernels.len());
    let mut names = BTreeSet::new();
    for (i, entry) in file.kernels.into_iter().enumerate() {
        let at = |f: &str| format!("kernels[{i}].{f}");
        let kernel = match (entry.ops, entry.shapes) {
            (Some(ops), Some(shapes)) => {
                if entry.count.is_some() {
                    return Err(invalid(at("count"), "only abstract entries take a count".into()));
                }
                let use_count = entry.use_count.unwrap_or(1);
                if use_count == 0 {
                    return Err(invalid(at("use_count"), "must be at least 1".into()));
                }
                let name = entry.name.unwrap_or_else(|| format!("{}_k{i}", file.name));
                let spec = KernelSpec::build(name.clone(), &ops, &shapes.into_map(), &entry.attrs)
                    .map_err(|e| invalid(format!("kernels[{i}]"), e.to_string()))?;
                if let Some(class) = &entry.class {
                    if class != spec.class() {
                        return Err(invalid(
                            at("class"),
                            format!("ops form class `{}`, not `{class}`", spec.class()),
                        ));
                    }
                }
                if !names.insert(name.clone()) {
                    return Err(invalid(at("name"), format!("duplicate kernel name `{name}`")));
                }
                ModelKernel::Executable {
                    spec: Arc::new(spec),
                    use_count,
                    label: entry.label,
                }
            }
            (Some(_), None) => return Err(invalid(at("shapes"), "required with `ops`".into())),
            (None, Some(_)) => return Err(invalid(at("ops"), "required with `shapes`".into())),
            (None, None) => {
                let Some(class) = entry.class else {
                    return Err(invalid(
                        format!("kernels[{i}]"),
                        "needs either `ops` and `shapes` or `class` and `count`".into(),
                    ));
                };
                if entry.use_count.is_some() || entry.name.is_some() || !is_default_attrs(&entry.attrs) {
                    return Err(invalid(
                        format!("kernels[{i}]"),
                        "abstract entries take only `class`, `count` and `label`".into(),
                    ));
                }
                let count = entry.count.unwrap_or(1);
                if count == 0 {
                    return Err(invalid(at("count"), "must be at least 1".into()));
                }
                ModelKernel::Abstract {
                    class,
                    count,
                    label: entry.label,
                }
            }
        };
        kernels.push(kernel);
    }
    let classes: BTreeSet<&KernelClassId> = kernels.iter().map(|k| k.class()).collect();
    if let Some(props) = &file.class_proportions {
        for (class, p) in props {
            let field = format!("class_proportions.{class}");
            if !p.is_finite() || *p < 0.0 || *p > 1.0 {
                return Err(invalid(field, format!("{p} is outside [0, 1]")));
            }
            if !classes.contains(class) {
                return Err(invalid(field, "no kernel of this class".into()));
            }
        }
        let sum: f64 = props.values().sum();
        if sum > PROPORTION_SUM_LIMIT {
            return Err(invalid(
                "class_proportions".into(),
                format!("proportions sum to {sum:.3}, more than {PROPORTION_SUM_LIMIT}"),
            ));
        }
    }
    for k in file.untuned_costs.keys() {
        if !names.contains(k) {
            return Err(invalid(format!("untuned_costs.{k}"), "no kernel of this name".into()));
        }
    }
    Ok(ModelDescriptor {
        name: file.name,
        id: file.id,
        kernels,
        class_proportions: file.class_proportions,
        untuned_costs: file.untuned_costs,
        tuning_model: file.tuning_model,
        heuristic_choices: file.heuristic_choices,
    })
}

/// Pretty JSON that parses back to an equal descriptor. Executable kernels
/// are written with normalized ops and input shapes only.
pub fn descriptor_to_string(model: &ModelDescriptor) -> String {
    let kernels = model
        .kernels
        .iter()
        .map(|k| match k {
            ModelKernel::Executable {
                spec,
                use_count,
                label,
            } => KernelEntry {
                name: Some(spec.name().to_string()),
                label: label.clone(),
                ops: Some(spec.ops().to_vec()),
                shapes: Some(ShapesEntry::inputs_of(spec)),
                attrs: spec.attrs().clone(),
                use_count: Some(*use_count),
                ..Default::default()
            },
            ModelKernel::Abstract {
                class,
                count,
                label,
            } => KernelEntry {
                label: label.clone(),
                class: Some(class.clone()),
                count: Some(*count),
                ..Default::default()
            },
        })
        .collect();
    let file = DescriptorFile {
        name: model.name.clone(),
        id: model.id.clone(),
        kernels,
        class_proportions: model.class_proportions.clone(),
        untuned_costs: model.untuned_costs.clone(),
        tuning_model: model.tuning_model.clone(),
        heuristic_choices: model.heuristic_choices.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("descriptors serialize");
    s.push('\n');
    s
}

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::loopnest::{KernelClassId, KernelSpec};

/// One kernel of a model. Abstract entries carry only a class and a count of
/// unique kernels, enough for the heuristic but not for execution.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelKernel {
    Executable {
        spec: Arc<KernelSpec>,
        use_count: usize,
        label: Option<String>,
    },
    Abstract {
        class: KernelClassId,
        count: usize,
        label: Option<String>,
    },
}

impl ModelKernel {
    pub fn executable(spec: KernelSpec, use_count: usize) -> Self {
        ModelKernel::Executable {
            spec: Arc::new(spec),
            use_count,
            label: None,
        }
    }

    pub fn class(&self) -> &KernelClassId {
        match self {
            ModelKernel::Executable { spec, .. } => spec.class(),
            ModelKernel::Abstract { class, .. } => class,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            ModelKernel::Executable { label, .. } | ModelKernel::Abstract { label, .. } => {
                label.as_deref()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassSummary {
    /// Unique kernels of the class.
    pub kernels: usize,
    /// Share of the untuned program time, in `[0, 1]`.
    pub proportion: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model `{0}` has neither class proportions nor untuned costs for every kernel")]
    MissingProportions(String),
    #[error("model `{model}`: kernel `{kernel}` has no shapes and cannot be executed")]
    NotExecutable { model: String, kernel: String },
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelDescriptor {
    pub name: String,
    /// Short identifier, e.g. a table row label.
    pub id: Option<String>,
    pub kernels: Vec<ModelKernel>,
    /// Supplied untuned-time proportions per class.
    pub class_proportions: Option<BTreeMap<KernelClassId, f64>>,
    /// Measured untuned nanoseconds per kernel name (one execution).
    pub untuned_costs: BTreeMap<String, u64>,
    /// Expected heuristic choice, carried by reference fixtures.
    pub tuning_model: Option<String>,
    pub heuristic_choices: Vec<String>,
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>, kernels: Vec<ModelKernel>) -> Self {
        ModelDescriptor {
            name: name.into(),
            kernels,
            ..Default::default()
        }
    }

    /// Executable kernels with their use counts, merged by workload
    /// fingerprint in first-appearance order.
    pub fn unique_kernels(&self) -> Vec<(Arc<KernelSpec>, usize)> {
        let mut out: Vec<(Arc<KernelSpec>, usize)> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for k in &self.kernels {
            if let ModelKernel::Executable { spec, use_count, .. } = k {
                match index.get(&spec.fingerprint()) {
                    Some(&i) => out[i].1 += use_count,
                    None => {
                        index.insert(spec.fingerprint(), out.len());
                        out.push((Arc::clone(spec), *use_count));
                    }
                }
            }
        }
        out
    }

    /// Fails if any kernel is abstract.
    pub fn executable_kernels(&self) -> Result<Vec<(Arc<KernelSpec>, usize)>, ModelError> {
        for k in &self.kernels {
            if let ModelKernel::Abstract { class, .. } = k {
                return Err(ModelError::NotExecutable {
                    model: self.name.clone(),
                    kernel: k.label().unwrap_or(class.as_str()).to_string(),
                });
            }
        }
        Ok(self.unique_kernels())
    }

    pub fn classes(&self) -> BTreeSet<KernelClassId> {
        self.kernels.iter().map(|k| k.class().clone()).collect()
    }

    /// Unique-kernel count per class.
    pub fn class_counts(&self) -> BTreeMap<KernelClassId, usize> {
        let mut counts = BTreeMap::new();
        for (spec, _) in self.unique_kernels() {
            *counts.entry(spec.class().clone()).or_insert(0) += 1;
        }
        for k in &self.kernels {
            if let ModelKernel::Abstract { class, count, .. } = k {
                *counts.entry(class.clone()).or_insert(0) += count;
            }
        }
        counts
    }

    /// Proportions from measured untuned costs, weighted by use count.
    pub fn derived_proportions(&self) -> Option<BTreeMap<KernelClassId, f64>> {
        let mut per_class: BTreeMap<KernelClassId, f64> = BTreeMap::new();
        let mut total = 0.0;
        for k in &self.kernels {
            match k {
                ModelKernel::Executable { spec, use_count, .. } => {
                    let ns = *self.untuned_costs.get(spec.name())? as f64 * *use_count as f64;
                    *per_class.entry(spec.class().clone()).or_insert(0.0) += ns;
                    total += ns;
                }
                ModelKernel::Abstract { .. } => return None,
            }
        }
        if total <= 0.0 {
            return None;
        }
        Some(per_class.into_iter().map(|(c, ns)| (c, ns / total)).collect())
    }

    /// Class → (|W_c|, P_c). Supplied proportions win over derived ones.
    pub fn class_summary(&self) -> Result<BTreeMap<KernelClassId, ClassSummary>, ModelError> {
        let proportions = match &self.class_proportions {
            Some(p) => p.clone(),
            None => self
                .derived_proportions()
                .ok_or_else(|| ModelError::MissingProportions(self.name.clone()))?,
        };
        Ok(self
            .class_counts()
            .into_iter()
            .map(|(class, kernels)| {
                let proportion = proportions.get(&class).copied().unwrap_or(0.0);
                (class, ClassSummary { kernels, proportion })
            })
            .collect())
    }
}

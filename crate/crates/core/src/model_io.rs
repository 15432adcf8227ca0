//! Model serialization: versioned JSON for fitted trees and forests.
//!
//! Files carry a `format_version`; loaders reject unknown major versions.
//! The covariate schema travels with the model so prediction can refuse
//! data whose schema differs from the training schema.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cif::{ForestConfig, ForestModel};
use crate::cit::{NodeKind, SplitRule, TreeConfig, TreeModel, TreeNode};
use crate::dataset::{Dataset, Schema};

pub const FORMAT_VERSION: &str = "1.0";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model format version `{0}` (supported major: 1)")]
    UnsupportedVersion(String),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("model schema does not match the provided data: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRepr {
    var: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cut: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subset: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    right: Option<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRepr {
    id: usize,
    depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitRepr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    children: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    majority_left: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    terminal_members: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    mfle_fallback: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeRepr {
    config: TreeConfig,
    seed: u64,
    nodes: Vec<NodeRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Payload {
    Tree(TreeRepr),
    Forest {
        config: ForestConfig,
        trees: Vec<TreeRepr>,
        inbag: Vec<Vec<u32>>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: String,
    n_train: usize,
    schema: Schema,
    #[serde(flatten)]
    payload: Payload,
}

fn tree_to_repr(model: &TreeModel) -> TreeRepr {
    let nodes = model
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| match &node.kind {
            NodeKind::Split {
                rule,
                majority_left,
                children,
            } => {
                let split = match rule {
                    SplitRule::Cut { covariate, cut } => SplitRepr {
                        var: *covariate,
                        cut: Some(*cut),
                        subset: None,
                        right: None,
                    },
                    SplitRule::Subset {
                        covariate,
                        left,
                        right,
                    } => SplitRepr {
                        var: *covariate,
                        cut: None,
                        subset: Some(left.clone()),
                        right: Some(right.clone()),
                    },
                };
                NodeRepr {
                    id,
                    depth: node.depth,
                    p_value: node.p_value,
                    split: Some(split),
                    children: Some(*children),
                    majority_left: Some(*majority_left),
                    terminal_members: None,
                    mfle_fallback: false,
                }
            }
            NodeKind::Leaf {
                members,
                mfle_fallback,
            } => NodeRepr {
                id,
                depth: node.depth,
                p_value: node.p_value,
                split: None,
                children: None,
                majority_left: None,
                terminal_members: Some(members.clone()),
                mfle_fallback: *mfle_fallback,
            },
        })
        .collect();
    TreeRepr {
        config: model.config.clone(),
        seed: model.seed,
        nodes,
    }
}

fn tree_from_repr(repr: TreeRepr, n_train: usize) -> Result<TreeModel, ModelIoError> {
    let n_nodes = repr.nodes.len();
    if n_nodes == 0 {
        return Err(ModelIoError::Malformed("tree has no nodes".into()));
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    for (idx, node) in repr.nodes.into_iter().enumerate() {
        if node.id != idx {
            return Err(ModelIoError::Malformed(format!(
                "node id {} out of order at position {idx}",
                node.id
            )));
        }
        let kind = match (node.split, node.children, node.terminal_members) {
            (Some(split), Some(children), None) => {
                if children.iter().any(|c| *c >= n_nodes || *c == 0) {
                    return Err(ModelIoError::Malformed(format!(
                        "node {idx} has out-of-range children {children:?}"
                    )));
                }
                let rule = match (split.cut, split.subset) {
                    (Some(cut), None) => SplitRule::Cut {
                        covariate: split.var,
                        cut,
                    },
                    (None, Some(left)) => SplitRule::Subset {
                        covariate: split.var,
                        left,
                        right: split.right.ok_or_else(|| {
                            ModelIoError::Malformed(format!(
                                "subset split at node {idx} lacks its right side"
                            ))
                        })?,
                    },
                    _ => {
                        return Err(ModelIoError::Malformed(format!(
                            "split at node {idx} must carry exactly one of cut/subset"
                        )))
                    }
                };
                NodeKind::Split {
                    rule,
                    majority_left: node.majority_left.unwrap_or(true),
                    children,
                }
            }
            (None, None, Some(members)) => {
                if members.iter().any(|m| *m >= n_train) {
                    return Err(ModelIoError::Malformed(format!(
                        "leaf {idx} references training index beyond n_train {n_train}"
                    )));
                }
                NodeKind::Leaf {
                    members,
                    mfle_fallback: node.mfle_fallback,
                }
            }
            _ => {
                return Err(ModelIoError::Malformed(format!(
                    "node {idx} is neither a well-formed split nor a leaf"
                )))
            }
        };
        nodes.push(TreeNode {
            depth: node.depth,
            p_value: node.p_value,
            kind,
        });
    }
    Ok(TreeModel {
        nodes,
        config: repr.config,
        n_train,
        seed: repr.seed,
    })
}

/// A model loaded from disk together with its training schema.
#[derive(Debug)]
pub struct ModelEnvelope {
    pub schema: Schema,
    pub n_train: usize,
    pub model: SavedModel,
}

#[derive(Debug)]
pub enum SavedModel {
    Tree(TreeModel),
    Forest(ForestModel),
}

impl ModelEnvelope {
    /// Prediction data must carry exactly the training schema (names, kinds
    /// and level lists) and, because terminal nodes reference training
    /// indices, the training dataset must have the recorded size.
    pub fn check_training_data(&self, ds: &Dataset) -> Result<(), ModelIoError> {
        if *ds.schema() != self.schema {
            return Err(ModelIoError::SchemaMismatch(
                "covariate schema differs from the model's training schema".into(),
            ));
        }
        if ds.n() != self.n_train {
            return Err(ModelIoError::SchemaMismatch(format!(
                "training data has {} rows, model was fit on {}",
                ds.n(),
                self.n_train
            )));
        }
        Ok(())
    }
}

fn write_file(path: impl AsRef<Path>, file: &ModelFile) -> Result<(), ModelIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, file)?;
    w.flush()?;
    Ok(())
}

pub fn save_tree(
    path: impl AsRef<Path>,
    model: &TreeModel,
    schema: &Schema,
) -> Result<(), ModelIoError> {
    write_file(
        path,
        &ModelFile {
            format_version: FORMAT_VERSION.into(),
            n_train: model.n_train,
            schema: schema.clone(),
            payload: Payload::Tree(tree_to_repr(model)),
        },
    )
}

pub fn save_forest(
    path: impl AsRef<Path>,
    model: &ForestModel,
    schema: &Schema,
) -> Result<(), ModelIoError> {
    write_file(
        path,
        &ModelFile {
            format_version: FORMAT_VERSION.into(),
            n_train: model.n_train,
            schema: schema.clone(),
            payload: Payload::Forest {
                config: model.config.clone(),
                trees: model.trees.iter().map(tree_to_repr).collect(),
                inbag: model.inbag.clone(),
            },
        },
    )
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelEnvelope, ModelIoError> {
    let reader = BufReader::new(File::open(path)?);
    let file: ModelFile = serde_json::from_reader(reader)?;
    let major = file.format_version.split('.').next().unwrap_or("");
    if major != "1" {
        return Err(ModelIoError::UnsupportedVersion(file.format_version));
    }
    let model = match file.payload {
        Payload::Tree(repr) => SavedModel::Tree(tree_from_repr(repr, file.n_train)?),
        Payload::Forest {
            config,
            trees,
            inbag,
        } => {
            if trees.len() != inbag.len() {
                return Err(ModelIoError::Malformed(format!(
                    "{} trees but {} in-bag vectors",
                    trees.len(),
                    inbag.len()
                )));
            }
            if inbag.iter().any(|c| c.len() != file.n_train) {
                return Err(ModelIoError::Malformed(
                    "in-bag vector length differs from n_train".into(),
                ));
            }
            let trees = trees
                .into_iter()
                .map(|t| tree_from_repr(t, file.n_train))
                .collect::<Result<Vec<_>, _>>()?;
            SavedModel::Forest(ForestModel {
                trees,
                inbag,
                config,
                n_train: file.n_train,
            })
        }
    };
    Ok(ModelEnvelope {
        schema: file.schema,
        n_train: file.n_train,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cif::{grow_forest, predict_forest, ForestConfig};
    use crate::cit::grow_tree;
    use crate::dataset::{CaseWeights, CovValue, CovariateKind, FieldDef, LbrcRecord};
    use crate::estimators::Backend;
    use crate::rng::substream;
    use crate::scores::ScoreSpec;
    use rand::Rng;

    fn demo_dataset(n: usize) -> Dataset {
        let mut rng = substream(1, "model-io", 0);
        let schema = Schema::new(vec![
            FieldDef {
                name: "age".into(),
                kind: CovariateKind::Numeric,
            },
            FieldDef {
                name: "grade".into(),
                kind: CovariateKind::Ordered {
                    levels: vec!["i".into(), "ii".into(), "iii".into()],
                },
            },
        ])
        .unwrap();
        let records = (0..n)
            .map(|_| {
                let t: f64 = -rng.random::<f64>().ln() + 0.01;
                let a = rng.random::<f64>() * t;
                LbrcRecord::new(
                    a,
                    t.max(a + 1e-9),
                    u8::from(rng.random::<f64>() > 0.25),
                    vec![
                        CovValue::Numeric(rng.random()),
                        CovValue::Level(rng.random_range(0..3)),
                    ],
                )
            })
            .collect();
        Dataset::new(records, schema).unwrap()
    }

    #[test]
    fn tree_round_trip_preserves_predictions() {
        let ds = demo_dataset(60);
        let mut config = crate::cit::TreeConfig::standalone(ScoreSpec::LbrcMcle, Backend::Mcle);
        config.alpha = 1.0;
        let model = grow_tree(&ds, &CaseWeights::unit(60), &config, 4).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_tree(file.path(), &model, ds.schema()).unwrap();
        let envelope = load_model(file.path()).unwrap();
        envelope.check_training_data(&ds).unwrap();
        let SavedModel::Tree(loaded) = envelope.model else {
            panic!("expected a tree")
        };
        assert_eq!(loaded, model);
        let x = ds.covariate_row(3);
        let before = model.predict(&ds, &x).unwrap();
        let after = loaded.predict(&ds, &x).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn forest_round_trip_preserves_predictions() {
        let ds = demo_dataset(40);
        let mut cfg = ForestConfig::new(ScoreSpec::LbrcMcle, Backend::Mcle, 40, 2, 9);
        cfg.n_trees = 5;
        let forest = grow_forest(&ds, &cfg).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_forest(file.path(), &forest, ds.schema()).unwrap();
        let envelope = load_model(file.path()).unwrap();
        let SavedModel::Forest(loaded) = envelope.model else {
            panic!("expected a forest")
        };
        assert_eq!(loaded, forest);
        let x = ds.covariate_row(7);
        assert_eq!(
            predict_forest(&forest, &ds, &x).unwrap(),
            predict_forest(&loaded, &ds, &x).unwrap()
        );
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let ds = demo_dataset(30);
        let config = crate::cit::TreeConfig::standalone(ScoreSpec::Ltrc, Backend::LtrcKm);
        let model = grow_tree(&ds, &CaseWeights::unit(30), &config, 0).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_tree(file.path(), &model, ds.schema()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        std::fs::write(file.path(), &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            load_model(file.path()),
            Err(ModelIoError::Parse(_))
        ));
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        let ds = demo_dataset(30);
        let config = crate::cit::TreeConfig::standalone(ScoreSpec::Ltrc, Backend::LtrcKm);
        let model = grow_tree(&ds, &CaseWeights::unit(30), &config, 0).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_tree(file.path(), &model, ds.schema()).unwrap();
        let text = std::fs::read_to_string(file.path())
            .unwrap()
            .replace("\"format_version\": \"1.0\"", "\"format_version\": \"2.0\"");
        std::fs::write(file.path(), text).unwrap();
        assert!(matches!(
            load_model(file.path()),
            Err(ModelIoError::UnsupportedVersion(v)) if v == "2.0"
        ));
    }

    #[test]
    fn schema_mismatch_is_refused() {
        let ds = demo_dataset(30);
        let config = crate::cit::TreeConfig::standalone(ScoreSpec::Ltrc, Backend::LtrcKm);
        let model = grow_tree(&ds, &CaseWeights::unit(30), &config, 0).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_tree(file.path(), &model, ds.schema()).unwrap();
        let envelope = load_model(file.path()).unwrap();

        let other = demo_dataset(31);
        assert!(envelope.check_training_data(&other).is_err());

        let mut fields = ds.schema().fields.clone();
        fields[0].name = "weight".into();
        let renamed = Schema::new(fields).unwrap();
        let records = (0..ds.n()).map(|i| ds.record(i)).collect();
        let altered = Dataset::new(records, renamed).unwrap();
        assert!(matches!(
            envelope.check_training_data(&altered),
            Err(ModelIoError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn spec_level_json_shape() {
        let ds = demo_dataset(30);
        let mut config = crate::cit::TreeConfig::standalone(ScoreSpec::LbrcMcle, Backend::Mcle);
        config.alpha = 1.0;
        let model = grow_tree(&ds, &CaseWeights::unit(30), &config, 4).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_tree(file.path(), &model, ds.schema()).unwrap();
        let value: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(file.path()).unwrap()).unwrap();
        assert_eq!(value["kind"], "tree");
        assert!(value["config"].is_object());
        assert!(value["schema"].is_array());
        let nodes = value["nodes"].as_array().unwrap();
        assert!(!nodes.is_empty());
        for node in nodes {
            assert!(node["id"].is_number());
            let is_split = node.get("split").is_some();
            let is_leaf = node.get("terminal_members").is_some();
            assert!(is_split ^ is_leaf);
            if is_split {
                assert!(node["children"].as_array().unwrap().len() == 2);
                assert!(node["split"]["var"].is_number());
            }
        }
    }
}

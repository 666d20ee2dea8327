//! Ensemble directories: `manifest.json`, `member_<k>.json` and
//! `history.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::base::BaseModel;
use super::composer::MaskedComposer;
use super::ensemble::{DynamicsEnsemble, TrainHistory};
use super::{Architecture, DynamicsConfig};
use crate::env::ParentSetSpec;
use crate::error::{Error, Result};
use crate::nets::{FeedForwardNet, NetFile};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub arch: Architecture,
    pub state_dim: usize,
    pub action_dim: usize,
    pub parent_sets: Vec<ParentSetSpec>,
    pub config: DynamicsConfig,
    pub members: Vec<String>,
    pub diagnostics: Vec<Option<String>>,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
enum MemberFile {
    Unfactored {
        net: NetFile,
    },
    GlobalFactored {
        parent_sets: Vec<ParentSetSpec>,
        nets: Vec<NetFile>,
    },
    LocalFactored {
        composers: Vec<ComposerFile>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComposerFile {
    n_inputs: usize,
    embed_dim: usize,
    /// `[w | b]`, each `n_inputs x embed_dim` row-major.
    embed: Vec<f64>,
    head: NetFile,
}

fn member_file<T: Scalar>(m: &BaseModel<T>, n_inputs: usize) -> MemberFile {
    match m {
        BaseModel::Unfactored(net) => MemberFile::Unfactored { net: net.to_file() },
        BaseModel::GlobalFactored { parent_sets, nets } => MemberFile::GlobalFactored {
            parent_sets: parent_sets.clone(),
            nets: nets.iter().map(|n| n.to_file()).collect(),
        },
        BaseModel::LocalFactored(comps) => MemberFile::LocalFactored {
            composers: comps
                .iter()
                .map(|c| ComposerFile {
                    n_inputs,
                    embed_dim: c.embed_dim(),
                    embed: c.embed_params().iter().map(|v| v.as_f64()).collect(),
                    head: c.head().to_file(),
                })
                .collect(),
        },
    }
}

fn member_from_file<T: Scalar>(f: &MemberFile) -> Result<BaseModel<T>> {
    Ok(match f {
        MemberFile::Unfactored { net } => BaseModel::Unfactored(FeedForwardNet::from_file(net)?),
        MemberFile::GlobalFactored { parent_sets, nets } => BaseModel::GlobalFactored {
            parent_sets: parent_sets.clone(),
            nets: nets.iter().map(FeedForwardNet::from_file).collect::<Result<_>>()?,
        },
        MemberFile::LocalFactored { composers } => BaseModel::LocalFactored(
            composers
                .iter()
                .map(|c| {
                    if c.embed.len() != 2 * c.n_inputs * c.embed_dim {
                        return Err(Error::Format("composer embedder has wrong size".into()));
                    }
                    Ok(MaskedComposer::from_parts(
                        c.n_inputs,
                        c.embed_dim,
                        c.embed.iter().map(|v| T::lit(*v)).collect(),
                        FeedForwardNet::from_file(&c.head)?,
                    ))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

impl<T: Scalar> DynamicsEnsemble<T> {
    fn member_jsons(&self) -> Result<Vec<Vec<u8>>> {
        let n_in = self.state_dim + self.action_dim;
        self.members
            .iter()
            .map(|m| Ok(serde_json::to_vec(&member_file(m, n_in))?))
            .collect()
    }

    /// SHA-256 over the serialized members, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for bytes in self.member_jsons()? {
            h.update(&bytes);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn save(&self, dir: &Path, history: Option<&TrainHistory>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let jsons = self.member_jsons()?;
        let mut names = Vec::with_capacity(jsons.len());
        for (k, bytes) in jsons.iter().enumerate() {
            let name = format!("member_{k}.json");
            std::fs::write(dir.join(&name), bytes)?;
            names.push(name);
        }
        let manifest = EnsembleManifest {
            arch: self.arch,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            parent_sets: self.parent_sets.clone(),
            config: self.config.clone(),
            members: names,
            diagnostics: self.diagnostics.clone(),
            content_hash: self.content_hash()?,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        if let Some(h) = history {
            std::fs::write(dir.join("history.csv"), h.to_csv())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.display().to_string(),
                stage: "fit-dynamics",
            });
        }
        let manifest: EnsembleManifest = serde_json::from_slice(&std::fs::read(&path)?)?;
        let members = manifest
            .members
            .iter()
            .map(|name| {
                let f: MemberFile = serde_json::from_slice(&std::fs::read(dir.join(name))?)?;
                member_from_file(&f)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::from_members(
            manifest.arch,
            manifest.state_dim,
            manifest.action_dim,
            manifest.parent_sets,
            manifest.config,
            members,
        )?;
        ens.diagnostics = manifest.diagnostics;
        Ok(ens)
    }
}

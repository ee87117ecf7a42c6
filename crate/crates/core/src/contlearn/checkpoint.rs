use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hrncore::{HrnError, Network};
use crate::ndcompute::{Checkpoint, ConvStackSpec, DenseSpec, ParamSet, Tensor};

use super::{ContError, Head, Learner, StepReport, TaskSpec, TrainConfig, VcModel};

/// Either trained model kind, as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Hrn(Network),
    Vc(VcModel),
}

impl Model {
    fn inner(&self) -> &dyn Learner {
        match self {
            Model::Hrn(n) => n,
            Model::Vc(v) => v,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Learner {
        match self {
            Model::Hrn(n) => n,
            Model::Vc(v) => v,
        }
    }
}

impl Learner for Model {
    fn kind(&self) -> &'static str {
        self.inner().kind()
    }

    fn feature_dim(&self) -> usize {
        self.inner().feature_dim()
    }

    fn before_task(&mut self, spec: &TaskSpec) -> Result<(), ContError> {
        self.inner_mut().before_task(spec)
    }

    fn step(
        &mut self,
        head: &mut Head,
        batch: &[(Tensor, usize)],
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepReport, ContError> {
        self.inner_mut().step(head, batch, cfg, rng)
    }

    fn encode(&self, x: &Tensor) -> Result<Vec<f32>, ContError> {
        self.inner().encode(x)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: String,
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    task_id: usize,
    #[serde(default)]
    class_labels: Vec<u32>,
    sizes: Vec<usize>,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct VcMeta {
    conv: ConvStackSpec,
    input_shape: [usize; 3],
    learning_rate: f64,
    stages: Vec<Vec<ParamMeta>>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vc: Option<VcMeta>,
    heads: Vec<HeadMeta>,
}

fn dump(prefix: &str, ps: &ParamSet, out: &mut Vec<(String, Tensor)>) -> Vec<ParamMeta> {
    ps.iter()
        .map(|p| {
            out.push((format!("{prefix}.{}", p.name), p.value.clone()));
            ParamMeta { name: p.name.clone(), group: p.group.clone() }
        })
        .collect()
}

fn restore(prefix: &str, metas: &[ParamMeta], ck: &Checkpoint) -> Result<ParamSet, ContError> {
    let mut ps = ParamSet::new();
    for m in metas {
        let key = format!("{prefix}.{}", m.name);
        let t = ck.get(&key).ok_or_else(|| HrnError::Checkpoint(format!("missing tensor {key}")))?;
        ps.insert(m.name.clone(), m.group.clone(), t.clone());
    }
    Ok(ps)
}

/// Packs a model and its task heads (`head.{task}.{param}` tensors).
pub fn save_model(model: &Model, heads: &[Head]) -> Checkpoint {
    let mut tensors = Vec::new();
    let mut meta = ModelMeta { model: model.kind().to_string(), network: None, vc: None, heads: Vec::new() };
    match model {
        Model::Hrn(net) => {
            let (m, t) = net.to_parts();
            meta.network = Some(m);
            tensors.extend(t);
        }
        Model::Vc(vc) => {
            let stages =
                vc.stages.iter().enumerate().map(|(i, p)| dump(&format!("vc.{i}"), p, &mut tensors)).collect();
            meta.vc = Some(VcMeta {
                conv: vc.conv.clone(),
                input_shape: vc.input_shape,
                learning_rate: vc.learning_rate,
                stages,
            });
        }
    }
    for h in heads {
        let params = dump(&format!("head.{}", h.task_id), &h.params, &mut tensors);
        meta.heads.push(HeadMeta { task_id: h.task_id, class_labels: h.class_labels.clone(), sizes: h.spec.sizes.clone(), params });
    }
    Checkpoint { meta: serde_json::to_string(&meta).expect("model meta serializes"), tensors }
}

pub fn load_model(ck: &Checkpoint) -> Result<(Model, Vec<Head>), ContError> {
    let bad = |m: String| ContError::Hrn(HrnError::Checkpoint(m));
    let meta: ModelMeta = serde_json::from_str(&ck.meta).map_err(|e| bad(format!("metadata: {e}")))?;
    let model = match (meta.model.as_str(), meta.network, meta.vc) {
        ("hrn", Some(n), _) => Model::Hrn(Network::from_parts(&n, ck)?),
        ("vc", _, Some(v)) => {
            let stages = v
                .stages
                .iter()
                .enumerate()
                .map(|(i, p)| restore(&format!("vc.{i}"), p, ck))
                .collect::<Result<_, _>>()?;
            Model::Vc(VcModel {
                conv: v.conv,
                stages,
                input_shape: v.input_shape,
                learning_rate: v.learning_rate,
            })
        }
        (m, _, _) => return Err(bad(format!("unknown or incomplete model kind {m:?}"))),
    };
    let heads = meta
        .heads
        .iter()
        .map(|h| {
            let spec = DenseSpec::new(h.sizes.clone())?;
            let class_labels = if h.class_labels.is_empty() {
                (0..spec.output_len() as u32).collect()
            } else {
                h.class_labels.clone()
            };
            if class_labels.len() != spec.output_len() {
                return Err(bad(format!("head {} lists {} classes for {} outputs", h.task_id, class_labels.len(), spec.output_len())));
            }
            Ok(Head {
                task_id: h.task_id,
                class_labels,
                spec,
                params: restore(&format!("head.{}", h.task_id), &h.params, ck)?,
            })
        })
        .collect::<Result<Vec<_>, ContError>>()?;
    Ok((model, heads))
}

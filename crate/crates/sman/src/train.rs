//! Joint optimization by Adam with deterministic seeding, best-validation
//! checkpoint selection, and checkpoint serialization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::Tape;
use crate::corpus::{annotate_credibility, Corpus, LabelScheme, Split};
use crate::error::{Result, SmanError};
use crate::graphs::{build_graphs, DiffusionPattern, GraphSet};
use crate::model::{Ablation, MaskMode, Model, ModelConfig, ModelSizes};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 42,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(SmanError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SmanError::Config("batch_size must be at least 1".into()));
        }
        if self.model.scheme != corpus.scheme {
            return Err(SmanError::Config(format!(
                "label scheme {} does not match corpus scheme {}",
                self.model.scheme, corpus.scheme
            )));
        }
        Ok(())
    }
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
        }
    }

    /// One bias-corrected Adam update at step index `t` (1-based).
    pub fn apply(&mut self, store: &mut ParamStore, t: u64) -> Result<()> {
        if t == 0 {
            return Err(SmanError::Step("Adam step index must be >= 1".into()));
        }
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for ((pv, &g), (m, v)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.t += 1;
        self.apply(store, self.t)
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub val_accuracy: f64,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

/// Train on the given split, returning the checkpoint with the best
/// validation accuracy (earliest epoch on ties) and the per-epoch history.
pub fn train(corpus: &Corpus, split: &Split, config: &TrainConfig) -> Result<TrainResult> {
    train_with_words(corpus, split, config, None)
}

/// Like `train`, but optionally seeding the word table with pretrained
/// vectors before the first epoch.
pub fn train_with_words(
    corpus: &Corpus,
    split: &Split,
    config: &TrainConfig,
    word_table: Option<Tensor>,
) -> Result<TrainResult> {
    config.validate(corpus)?;
    let sizes = ModelSizes::from_corpus(corpus);
    let graphs = build_graphs(corpus, config.model.k, config.model.pattern)?;
    let credibility = annotate_credibility(corpus, &split.train);
    let mut model = Model::init(config.model.clone(), sizes, config.seed)?;
    if let Some(table) = word_table {
        model.set_word_embeddings(table)?;
    }
    let mut adam = Adam::new(config.lr, &model.params);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));

    let mut train_ids: Vec<u32> = split.train.iter().copied().collect();
    if train_ids.is_empty() {
        return Err(SmanError::EmptyBatch("training split is empty".into()));
    }
    let val_ids: Vec<u32> = split.val.iter().copied().collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        train_ids.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in train_ids.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let out = model.loss(
                &mut tape,
                &binding,
                corpus,
                &graphs,
                batch,
                &credibility,
                config.ablation,
            )?;
            loss_sum += tape.value(out.loss).scalar_value();
            batches += 1;
            let grads = tape.backward(out.loss);
            model.params.zero_grads();
            binding.write_grads(&grads, &mut model.params);
            model.params.apply_freeze();
            adam.step(&mut model.params)?;
        }
        let val_accuracy = if val_ids.is_empty() {
            f64::NAN
        } else {
            accuracy(&model, corpus, &graphs, &val_ids)?
        };
        let train_loss = loss_sum / batches as f64;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });
        // Without a validation set every epoch "improves", so the final
        // parameters are returned.
        let better = match &best {
            None => true,
            Some((acc, _, _)) => val_accuracy.is_nan() || val_accuracy > *acc,
        };
        if better {
            best = Some((val_accuracy, epoch, model.params.clone()));
        }
    }
    let (val_accuracy, epoch, params) = best.unwrap();
    let model = Model {
        cfg: model.cfg.clone(),
        sizes,
        params,
    };
    Ok(TrainResult {
        checkpoint: Checkpoint {
            model,
            train_config: config.clone(),
            epoch,
            val_accuracy,
        },
        history,
    })
}

pub fn accuracy(model: &Model, corpus: &Corpus, graphs: &GraphSet, ids: &[u32]) -> Result<f64> {
    let preds = model.predict(corpus, graphs, ids, 64)?;
    let mut hits = 0usize;
    for (&id, &pred) in ids.iter().zip(&preds) {
        let item = corpus.get(id).unwrap();
        if pred == corpus.scheme.class_index(item.label)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / ids.len() as f64)
}

const PARAMS_MAGIC: &[u8; 8] = b"SMANPAR1";

impl Checkpoint {
    /// Write `manifest.txt` (key=value) and `params.bin` (name-keyed
    /// little-endian f32 blobs) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for (k, v) in self.manifest_entries() {
            manifest.push_str(&format!("{} = {}\n", k, v));
        }
        atomic_write(&dir.join("manifest.txt"), manifest.as_bytes())?;

        let mut blob: Vec<u8> = Vec::new();
        blob.extend_from_slice(PARAMS_MAGIC);
        blob.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for p in self.model.params.iter() {
            let name = p.name.as_bytes();
            blob.extend_from_slice(&(name.len() as u32).to_le_bytes());
            blob.extend_from_slice(name);
            blob.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &dim in p.value.shape() {
                blob.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        atomic_write(&dir.join("params.bin"), &blob)?;
        Ok(())
    }

    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        let m = &self.model.cfg;
        let t = &self.train_config;
        let windows: Vec<String> = m.windows.iter().map(|w| w.to_string()).collect();
        vec![
            ("format".into(), "sman-checkpoint-1".into()),
            ("d".into(), m.d.to_string()),
            ("d_w".into(), m.d_w.to_string()),
            ("heads".into(), m.heads.to_string()),
            ("k".into(), m.k.to_string()),
            ("windows".into(), windows.join(",")),
            ("scheme".into(), m.scheme.to_string()),
            ("mask_mode".into(), m.mask_mode.to_string()),
            ("lambda".into(), format!("{:e}", m.lambda)),
            ("pattern".into(), m.pattern.to_string()),
            ("publisher_rows".into(), self.model.sizes.publisher_rows.to_string()),
            ("news_rows".into(), self.model.sizes.news_rows.to_string()),
            ("user_rows".into(), self.model.sizes.user_rows.to_string()),
            ("vocab".into(), self.model.sizes.vocab.to_string()),
            ("lr".into(), format!("{:e}", t.lr)),
            ("epochs".into(), t.epochs.to_string()),
            ("batch_size".into(), t.batch_size.to_string()),
            ("seed".into(), t.seed.to_string()),
            ("ablation".into(), t.ablation.to_string()),
            ("epoch".into(), self.epoch.to_string()),
            ("val_accuracy".into(), format!("{}", self.val_accuracy)),
        ]
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest_path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&manifest_path)?;
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k).ok_or_else(|| {
                SmanError::Integrity(format!("checkpoint manifest missing key {:?}", k))
            })
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| SmanError::Integrity(format!("bad {} in manifest: {}", k, e)))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|e| SmanError::Integrity(format!("bad {} in manifest: {}", k, e)))
        };
        let windows: Vec<usize> = get("windows")?
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| SmanError::Integrity(format!("bad windows in manifest: {}", e)))?;
        let model_cfg = ModelConfig {
            d: parse_usize("d")?,
            d_w: parse_usize("d_w")?,
            heads: parse_usize("heads")?,
            k: parse_usize("k")?,
            windows,
            scheme: LabelScheme::parse(get("scheme")?)
                .ok_or_else(|| SmanError::Integrity("bad scheme in manifest".into()))?,
            mask_mode: MaskMode::parse(get("mask_mode")?)
                .ok_or_else(|| SmanError::Integrity("bad mask_mode in manifest".into()))?,
            lambda: parse_f64("lambda")?,
            pattern: DiffusionPattern::parse(get("pattern")?)
                .ok_or_else(|| SmanError::Integrity("bad pattern in manifest".into()))?,
        };
        let sizes = ModelSizes {
            publisher_rows: parse_usize("publisher_rows")?,
            news_rows: parse_usize("news_rows")?,
            user_rows: parse_usize("user_rows")?,
            vocab: parse_usize("vocab")?,
        };
        let train_config = TrainConfig {
            model: model_cfg.clone(),
            lr: parse_f64("lr")?,
            epochs: parse_usize("epochs")?,
            batch_size: parse_usize("batch_size")?,
            seed: parse_usize("seed")? as u64,
            ablation: Ablation::parse(get("ablation")?)
                .ok_or_else(|| SmanError::Integrity("bad ablation in manifest".into()))?,
        };

        let mut file = std::fs::File::open(dir.join("params.bin"))?;
        let mut blob = Vec::new();
        file.read_to_end(&mut blob)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > blob.len() {
                return Err(SmanError::Integrity("truncated params.bin".into()));
            }
            let s = &blob[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != PARAMS_MAGIC {
            return Err(SmanError::Integrity("bad params.bin magic".into()));
        }
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let count = read_u32(&mut pos)?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| SmanError::Integrity("non-UTF-8 parameter name".into()))?;
            let ndim = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut pos)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let b = take(&mut pos, 4)?;
                data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
            }
            let frozen = name.starts_with("embed.");
            params.add(&name, Tensor::new(shape, data)?, frozen)?;
        }
        Ok(Checkpoint {
            model: Model {
                cfg: model_cfg,
                sizes,
                params,
            },
            train_config,
            epoch: parse_usize("epoch")?,
            val_accuracy: parse_f64("val_accuracy")?,
        })
    }
}

/// Write a file via a temp sibling and rename, so readers never observe a
/// partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut store = ParamStore::new();
        store
            .add("p", Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap(), false)
            .unwrap();
        let mut adam = Adam::new(0.1, &store);
        adam.step(&mut store).unwrap();
        assert_eq!(store.get("p").unwrap().value.data(), &[1.5, -2.0]);
        assert!(adam.m[0].data().iter().all(|&x| x == 0.0));
        assert!(adam.v[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_first_step_hand_case() {
        // p = 0, g = 1, lr = 0.1, t = 1: m_hat = 1, v_hat = 1,
        // p <- -0.1 / (1 + eps) ~ -0.1.
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(0.0), false).unwrap();
        store.get_mut("p").unwrap().grad = Tensor::scalar(1.0);
        let mut adam = Adam::new(0.1, &store);
        adam.step(&mut store).unwrap();
        let p = store.get("p").unwrap().value.scalar_value();
        assert!((p + 0.1).abs() < 1e-8, "p = {}", p);
    }

    #[test]
    fn adam_rejects_step_zero() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::scalar(0.0), false).unwrap();
        let mut adam = Adam::new(0.1, &store);
        assert!(matches!(
            adam.apply(&mut store, 0),
            Err(SmanError::Step(_))
        ));
    }

    #[test]
    fn adam_trajectories_deterministic() {
        let run = || {
            let mut store = ParamStore::new();
            store
                .add("p", Tensor::matrix(1, 3, vec![0.3, -0.7, 1.1]).unwrap(), false)
                .unwrap();
            let mut adam = Adam::new(0.05, &store);
            let mut trace = Vec::new();
            for step in 0..20 {
                let vals: Vec<f64> = store.get("p").unwrap().value.data().to_vec();
                store.get_mut("p").unwrap().grad =
                    Tensor::matrix(1, 3, vals.iter().map(|v| 2.0 * v + step as f64 * 0.01).collect())
                        .unwrap();
                adam.step(&mut store).unwrap();
                trace.extend(store.get("p").unwrap().value.data().iter().copied());
            }
            trace
        };
        assert_eq!(run(), run());
    }
}

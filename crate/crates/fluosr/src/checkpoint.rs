//! Training checkpoints and extractor weight files.
//!
//! A checkpoint holds the generator, the discriminator when phase 2 has
//! started, both optimizer states, and the run configuration it was trained
//! with. Epoch batches are a pure function of the seed, phase and epoch, so
//! this is all a resumed run needs.

use std::path::Path;

use fluosr_core::models::FeatureExtractorConfig;
use fluosr_core::optim::{AdamState, AdamStates};
use fluosr_core::trainer::{Phase, Trainer};
use fluosr_core::{ParamStore, Real, Tensor};

use crate::config::RunConfig;
use crate::container::{Container, Value};
use crate::error::{data_err, Result};

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub phase: Phase,
    /// Epochs finished within `phase`.
    pub epochs_done: usize,
    pub low_d_streak: usize,
    pub config: RunConfig,
    pub generator: ParamStore<T>,
    pub generator_adam: AdamStates<T>,
    pub discriminator: Option<(ParamStore<T>, AdamStates<T>)>,
}

fn put_store<T: Real>(c: &mut Container, prefix: &str, store: &ParamStore<T>) {
    for (name, t) in store.iter() {
        c.insert(format!("{prefix}/{name}"), Value::from_tensor(t));
    }
}

fn get_store<T: Real>(c: &Container, prefix: &str) -> Result<ParamStore<T>> {
    let full = format!("{prefix}/");
    c.with_prefix(&full)
        .map(|(name, v)| Ok((name.to_string(), v.to_tensor(&format!("{full}{name}"))?)))
        .collect()
}

fn put_adam<T: Real>(c: &mut Container, prefix: &str, states: &AdamStates<T>) {
    let vector = |v: &[T]| Value::from_tensor(&Tensor::new([v.len()], v.to_vec()).expect("1-D shape"));
    for (name, st) in states.iter() {
        c.insert(format!("{prefix}/{name}/m"), vector(&st.first_moment));
        c.insert(format!("{prefix}/{name}/v"), vector(&st.second_moment));
        c.insert(format!("{prefix}/{name}/vmax"), vector(&st.max_second_moment));
        c.put_u64(&format!("{prefix}/{name}/step"), st.step_count);
    }
}

fn get_adam<T: Real>(c: &Container, prefix: &str, params: &ParamStore<T>) -> Result<AdamStates<T>> {
    let mut states = AdamStates::default();
    for (name, p) in params.iter() {
        let key = |part: &str| format!("{prefix}/{name}/{part}");
        let vector = |part: &str| -> Result<Vec<T>> {
            let t = c.get(&key(part))?.to_tensor::<T>(&key(part))?;
            if t.numel() != p.numel() {
                return Err(data_err!("`{}` has {} elements, parameter has {}", key(part), t.numel(), p.numel()));
            }
            Ok(t.into_data())
        };
        states.insert(
            name,
            AdamState {
                first_moment: vector("m")?,
                second_moment: vector("v")?,
                max_second_moment: vector("vmax")?,
                step_count: c.u64(&key("step"))?,
            },
        );
    }
    Ok(states)
}

impl<T: Real> Checkpoint<T> {
    pub fn from_trainer(trainer: &Trainer<T>, config: &RunConfig, phase: Phase, epochs_done: usize) -> Self {
        Self {
            phase,
            epochs_done,
            low_d_streak: trainer.low_d_streak,
            config: config.clone(),
            generator: trainer.generator.clone(),
            generator_adam: trainer.generator_adam.clone(),
            discriminator: trainer.discriminator.clone().zip(trainer.discriminator_adam.clone()),
        }
    }

    /// Copies the saved state into `trainer`, whose networks must have the
    /// same layouts.
    pub fn restore(&self, trainer: &mut Trainer<T>) -> Result<()> {
        self.generator.check_layout(&trainer.generator_config.layout())?;
        trainer.generator = self.generator.clone();
        trainer.generator_adam = self.generator_adam.clone();
        match &self.discriminator {
            Some((d, adam)) => {
                d.check_layout(&trainer.discriminator_config.layout())?;
                trainer.discriminator = Some(d.clone());
                trainer.discriminator_adam = Some(adam.clone());
            }
            None => {
                trainer.discriminator = None;
                trainer.discriminator_adam = None;
            }
        }
        trainer.low_d_streak = self.low_d_streak;
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.put_u64("meta/phase", u64::from(self.phase.number()));
        c.put_u64("meta/epochs_done", self.epochs_done as u64);
        c.put_u64("meta/low_d_streak", self.low_d_streak as u64);
        c.put_text("meta/config", &self.config.to_text());
        c.put_text("meta/config_hash", &self.config.hash());
        c.put_text("meta/dtype", T::DTYPE.name());
        put_store(&mut c, "gen", &self.generator);
        put_adam(&mut c, "gen_adam", &self.generator_adam);
        if let Some((d, adam)) = &self.discriminator {
            put_store(&mut c, "disc", d);
            put_adam(&mut c, "disc_adam", adam);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = RunConfig::from_text(c.text("meta/config")?)
            .map_err(|e| data_err!("stored configuration unreadable: {e}"))?;
        if c.text("meta/config_hash")? != config.hash() {
            return Err(data_err!("stored configuration does not match its hash"));
        }
        let generator = get_store::<T>(c, "gen")?;
        generator.check_layout(&config.generator.layout())?;
        let generator_adam = get_adam(c, "gen_adam", &generator)?;
        let discriminator = if c.with_prefix("disc/").next().is_some() {
            let d = get_store::<T>(c, "disc")?;
            d.check_layout(&config.discriminator().layout())?;
            let adam = get_adam(c, "disc_adam", &d)?;
            Some((d, adam))
        } else {
            None
        };
        Ok(Self {
            phase: Phase::from_number(c.u64("meta/phase")?)?,
            epochs_done: c.u64("meta/epochs_done")? as usize,
            low_d_streak: c.u64("meta/low_d_streak")? as usize,
            config,
            generator,
            generator_adam,
            discriminator,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?).map_err(|e| data_err!("{}: {e}", path.display()))
    }
}

/// Reads an extractor weight file (records named like the layout, e.g.
/// `block1.conv1.weight`) and checks it against `config`.
pub fn load_extractor<T: Real>(path: &Path, config: &FeatureExtractorConfig) -> Result<ParamStore<T>> {
    let c = Container::load(path)?;
    let store = c
        .records
        .iter()
        .map(|(k, v)| Ok((k.clone(), v.to_tensor::<T>(k)?)))
        .collect::<Result<ParamStore<T>>>()?;
    config
        .check_weights(&store)
        .map_err(|e| data_err!("{}: {e}", path.display()))?;
    Ok(store)
}

pub fn save_extractor<T: Real>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    let mut c = Container::new();
    for (name, t) in store.iter() {
        c.insert(name, Value::from_tensor(t));
    }
    c.save(path)
}

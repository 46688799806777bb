use rand::Rng;

use crate::corpus::Vocab;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{Array, Tape, Var};
use crate::scalar::Scalar;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameter arrays in a fixed registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    names: Vec<String>,
    arrays: Vec<Array<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            arrays: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn from_parts(names: Vec<String>, arrays: Vec<Array<T>>) -> Result<Self> {
        if names.len() != arrays.len() {
            return Err(Error::Checkpoint(format!(
                "{} names for {} arrays",
                names.len(),
                arrays.len()
            )));
        }
        Ok(ParamStore { names, arrays })
    }

    fn push(&mut self, name: String, array: Array<T>) -> ParamId {
        self.names.push(name);
        self.arrays.push(array);
        ParamId(self.arrays.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.arrays[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn arrays(&self) -> &[Array<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [Array<T>] {
        &mut self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(Array::len).sum()
    }

    pub fn position(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Records every parameter as a borrowed tape leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        Bound(self.arrays.iter().map(|a| tape.leaf(a)).collect())
    }
}

/// Tape variables for a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Wraps externally created leaves, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }
}

#[derive(Clone, Debug)]
pub struct EmbeddingLayout {
    pub word: Option<ParamId>,
    pub upos: ParamId,
    pub deprel: ParamId,
    pub entity_type: ParamId,
    pub position: Option<ParamId>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

#[derive(Clone, Debug)]
pub struct HeadLayout {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerLayout {
    pub heads: Vec<HeadLayout>,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct ClassifierLayout {
    pub w: ParamId,
    pub b: ParamId,
    pub trigger_type: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub embedding: EmbeddingLayout,
    pub layers: Vec<LayerLayout>,
    pub classifier: ClassifierLayout,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform,
    Zeros,
    Ones,
}

struct Builder<'r, T: Scalar, R: Rng + ?Sized> {
    store: ParamStore<T>,
    rng: Option<&'r mut R>,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let array = match (init, self.rng.as_deref_mut()) {
            (Init::Uniform, Some(rng)) => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let data = (0..rows * cols).map(|_| T::of(rng.gen_range(-a..a))).collect();
                Array::from_vec(rows, cols, data).expect("sized")
            }
            (Init::Ones, _) => Array::filled(rows, cols, T::one()),
            _ => Array::zeros(rows, cols),
        };
        self.store.push(name, array)
    }
}

fn build<T: Scalar, R: Rng + ?Sized>(
    cfg: &EncoderConfig,
    vocab: &Vocab,
    rng: Option<&mut R>,
) -> (Layout, ParamStore<T>) {
    let mut b = Builder {
        store: ParamStore::default(),
        rng,
    };
    let (dm, dk, fe) = (cfg.d_model, cfg.d_k(), cfg.feature_emb_dim);
    let embedding = EmbeddingLayout {
        word: (!cfg.external_word_features)
            .then(|| b.add("emb.word".into(), vocab.form.len(), cfg.word_emb_dim, Init::Uniform)),
        upos: b.add("emb.upos".into(), vocab.upos.len(), fe, Init::Uniform),
        deprel: b.add("emb.deprel".into(), vocab.deprel.len(), fe, Init::Uniform),
        entity_type: b.add("emb.entity_type".into(), vocab.entity_type.len(), fe, Init::Uniform),
        position: cfg
            .position_embedding
            .then(|| b.add("emb.position".into(), cfg.max_len, dm, Init::Uniform)),
        proj_w: b.add("emb.proj.w".into(), cfg.input_dim(), dm, Init::Uniform),
        proj_b: b.add("emb.proj.b".into(), 1, dm, Init::Zeros),
    };
    let layers = (0..cfg.n_layers)
        .map(|l| {
            let heads = (0..cfg.n_heads)
                .map(|h| HeadLayout {
                    wq: b.add(format!("layer{l}.head{h}.wq"), dm, dk, Init::Uniform),
                    wk: b.add(format!("layer{l}.head{h}.wk"), dm, dk, Init::Uniform),
                    wv: b.add(format!("layer{l}.head{h}.wv"), dm, dk, Init::Uniform),
                })
                .collect();
            LayerLayout {
                heads,
                wo: b.add(format!("layer{l}.attn.wo"), cfg.n_heads * dk, dm, Init::Uniform),
                bo: b.add(format!("layer{l}.attn.bo"), 1, dm, Init::Zeros),
                ln1_gain: b.add(format!("layer{l}.ln1.gain"), 1, dm, Init::Ones),
                ln1_bias: b.add(format!("layer{l}.ln1.bias"), 1, dm, Init::Zeros),
                ff1_w: b.add(format!("layer{l}.ff1.w"), dm, cfg.ffn_dim, Init::Uniform),
                ff1_b: b.add(format!("layer{l}.ff1.b"), 1, cfg.ffn_dim, Init::Zeros),
                ff2_w: b.add(format!("layer{l}.ff2.w"), cfg.ffn_dim, dm, Init::Uniform),
                ff2_b: b.add(format!("layer{l}.ff2.b"), 1, dm, Init::Zeros),
                ln2_gain: b.add(format!("layer{l}.ln2.gain"), 1, dm, Init::Ones),
                ln2_bias: b.add(format!("layer{l}.ln2.bias"), 1, dm, Init::Zeros),
            }
        })
        .collect();
    let trigger_type = cfg
        .trigger_type_feature
        .then(|| b.add("cls.trigger_type".into(), vocab.trigger_type.len(), fe, Init::Uniform));
    let cls_in = 3 * dm + if cfg.trigger_type_feature { fe } else { 0 };
    let classifier = ClassifierLayout {
        w: b.add("cls.w".into(), cls_in, vocab.label.len(), Init::Uniform),
        b: b.add("cls.b".into(), 1, vocab.label.len(), Init::Zeros),
        trigger_type,
    };
    (
        Layout {
            embedding,
            layers,
            classifier,
        },
        b.store,
    )
}

/// Encoder and classifier parameters for one task, with their vocabulary.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub layout: Layout,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layout, params) = build(&config, &vocab, Some(rng));
        Ok(Model {
            config,
            vocab,
            layout,
            params,
        })
    }

    /// Rebuilds a model around stored arrays, checking names and shapes.
    pub fn from_params(config: EncoderConfig, vocab: Vocab, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (layout, expected) = build::<T, rand::rngs::mock::StepRng>(&config, &vocab, None);
        if expected.names != params.names {
            return Err(Error::Checkpoint(
                "parameter names do not match the configuration".into(),
            ));
        }
        for (name, (a, b)) in expected.names.iter().zip(expected.arrays.iter().zip(&params.arrays)) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Model {
            config,
            vocab,
            layout,
            params,
        })
    }
}

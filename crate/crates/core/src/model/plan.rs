//! Parameter layout, shared by model construction and analytic counting.

use serde::{Deserialize, Serialize};

use super::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Embeddings,
    Encoder,
    Decoder(usize),
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub component: Component,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    pub norm1: Norm,
    pub self_attn: Attention,
    pub norm2: Norm,
    pub cross_attn: Attention,
    pub norm3: Norm,
    pub ffn: FeedForward,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayout {
    pub embed: usize,
    pub layers: Vec<EncoderLayer>,
    pub norm: Norm,
}

/// One decoder stack. The target embedding doubles as the GEN output projection.
#[derive(Clone, Debug)]
pub(crate) struct DecoderLayout {
    pub embed: usize,
    pub gen_bias: usize,
    pub layers: Vec<DecoderLayer>,
    pub norm: Norm,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub encoder: EncoderLayout,
    pub decoders: Vec<DecoderLayout>,
}

/// Learnable scalar counts by component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub embeddings: usize,
    pub encoder: usize,
    pub decoders: Vec<(String, usize)>,
    pub heads: usize,
    pub total: usize,
}

/// Weights plus optional bias of a `fan_in -> fan_out` linear map.
pub fn linear_param_count(fan_in: usize, fan_out: usize, bias: bool) -> usize {
    fan_in * fan_out + if bias { fan_out } else { 0 }
}

#[derive(Clone, Debug)]
pub struct ParamPlan {
    pub specs: Vec<ParamSpec>,
    pub decoder_names: Vec<String>,
    pub(crate) layout: Layout,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, component: Component, init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape,
            component,
            init,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, c: Component) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: self.add(format!("{name}.w"), vec![fan_in, fan_out], c, Init::Uniform(bound)),
            b: self.add(format!("{name}.b"), vec![fan_out], c, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize, c: Component) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), vec![d], c, Init::Ones),
            b: self.add(format!("{name}.b"), vec![d], c, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str, d: usize, c: Component) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d, c),
            k: self.linear(&format!("{name}.k"), d, d, c),
            v: self.linear(&format!("{name}.v"), d, d, c),
            o: self.linear(&format!("{name}.o"), d, d, c),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, inner: usize, c: Component) -> FeedForward {
        FeedForward {
            inner: self.linear(&format!("{name}.inner"), d, inner, c),
            outer: self.linear(&format!("{name}.outer"), inner, d, c),
        }
    }
}

impl ParamPlan {
    /// Lays out every parameter for `config` with the given vocabulary sizes;
    /// one decoder per entry of `target_vocabs`.
    pub fn new(config: &ModelConfig, source_vocab: usize, target_vocabs: &[usize], decoder_names: &[String]) -> Self {
        assert_eq!(target_vocabs.len(), decoder_names.len());
        let d = config.units;
        let ffn = config.ffn_units();
        let emb_bound = 1.0 / (d as f64).sqrt();
        let mut b = Builder { specs: Vec::new() };
        let enc = Component::Encoder;
        let embed = b.add(
            "encoder.embed".into(),
            vec![source_vocab, d],
            Component::Embeddings,
            Init::Uniform(emb_bound),
        );
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("encoder.layer{l}");
                EncoderLayer {
                    norm1: b.norm(&format!("{p}.norm1"), d, enc),
                    attn: b.attention(&format!("{p}.attn"), d, enc),
                    norm2: b.norm(&format!("{p}.norm2"), d, enc),
                    ffn: b.ffn(&format!("{p}.ffn"), d, ffn, enc),
                }
            })
            .collect();
        let norm = b.norm("encoder.norm", d, enc);
        let encoder = EncoderLayout { embed, layers, norm };

        let decoders = target_vocabs
            .iter()
            .zip(decoder_names)
            .enumerate()
            .map(|(i, (&v, name))| {
                let c = Component::Decoder(i);
                let p = if decoder_names.len() == 1 {
                    "decoder".to_string()
                } else {
                    format!("decoder.{name}")
                };
                let embed = b.add(
                    format!("{p}.embed"),
                    vec![v, d],
                    Component::Embeddings,
                    Init::Uniform(emb_bound),
                );
                let gen_bias = b.add(format!("{p}.gen_bias"), vec![v], Component::Head, Init::Zeros);
                let layers = (0..config.layers)
                    .map(|l| {
                        let q = format!("{p}.layer{l}");
                        DecoderLayer {
                            norm1: b.norm(&format!("{q}.norm1"), d, c),
                            self_attn: b.attention(&format!("{q}.self_attn"), d, c),
                            norm2: b.norm(&format!("{q}.norm2"), d, c),
                            cross_attn: b.attention(&format!("{q}.cross_attn"), d, c),
                            norm3: b.norm(&format!("{q}.norm3"), d, c),
                            ffn: b.ffn(&format!("{q}.ffn"), d, ffn, c),
                        }
                    })
                    .collect();
                let norm = b.norm(&format!("{p}.norm"), d, c);
                DecoderLayout {
                    embed,
                    gen_bias,
                    layers,
                    norm,
                }
            })
            .collect();
        ParamPlan {
            specs: b.specs,
            decoder_names: decoder_names.to_vec(),
            layout: Layout { encoder, decoders },
        }
    }

    pub fn count(&self) -> ParamCount {
        let mut out = ParamCount {
            embeddings: 0,
            encoder: 0,
            decoders: self.decoder_names.iter().map(|n| (n.clone(), 0)).collect(),
            heads: 0,
            total: 0,
        };
        for s in &self.specs {
            let n = s.numel();
            match s.component {
                Component::Embeddings => out.embeddings += n,
                Component::Encoder => out.encoder += n,
                Component::Decoder(i) => out.decoders[i].1 += n,
                Component::Head => out.heads += n,
            }
            out.total += n;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchMode, Preset};

    #[test]
    fn linear_count() {
        assert_eq!(linear_param_count(1024, 1024, true), 1_049_600);
    }

    #[test]
    fn one_to_n_decoders_scale_with_tasks() {
        let mut c = Preset::OneToN.model_config();
        c.units = 32;
        c.heads = 4;
        let names: Vec<String> = (0..3).map(|i| format!("t{i}")).collect();
        let multi = ParamPlan::new(&c, 50, &[20, 20, 20], &names).count();
        c.mode = ArchMode::Single;
        let single = ParamPlan::new(&c, 50, &[20], &names[..1]).count();
        assert!(multi.decoders.iter().all(|(_, n)| *n == single.decoders[0].1));
        assert_eq!(multi.encoder, single.encoder);
        let sum: usize =
            multi.embeddings + multi.encoder + multi.heads + multi.decoders.iter().map(|d| d.1).sum::<usize>();
        assert_eq!(sum, multi.total);
    }
}

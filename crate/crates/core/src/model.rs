//! Trainable model state and its binary checkpoint format.
//!
//! Checkpoint layout, all little-endian:
//!
//! ```text
//! "QCWE" | version u32 | Q u32 | B u32 | entanglement u32 | vocab size u32
//! shared a-block: B·Q f64
//! per token, in id order: alpha (B·Q f64, row-major) | z (B·Q f64) | x f64
//! head: kind u32 | beta f64 | alpha f64 | b f64 | epsilon f64
//! ```
//!
//! A sidecar TSV (`token<TAB>id`) maps strings to ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ansatz::{embed_unchecked, CircuitConfig, Entanglement, SharedParams, TokenParams};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::qstate::{inner_unchecked, StateVector};
use crate::scoring::{HeadConfig, HeadKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QCWE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub circuit: CircuitConfig,
    pub shared: SharedParams,
    pub tokens: Vec<TokenParams>,
    pub head: HeadConfig,
}

impl Model {
    /// Random initialization: shared offsets first, then tokens in id order.
    pub fn init(
        circuit: CircuitConfig,
        vocab_size: usize,
        head: HeadConfig,
        seed: u64,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::Empty("model needs a non-empty vocabulary".into()));
        }
        head.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shared = SharedParams::init(&circuit, &mut rng);
        let tokens = (0..vocab_size)
            .map(|_| TokenParams::init(&circuit, &mut rng))
            .collect();
        Ok(Self {
            circuit,
            shared,
            tokens,
            head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.shared.validate(&self.circuit)?;
        self.tokens
            .iter()
            .try_for_each(|t| t.validate(&self.circuit))
    }

    fn check_id(&self, id: u32) -> Result<()> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "token id {id} outside vocabulary of {}",
                self.tokens.len()
            )))
        }
    }

    pub fn embed(&self, id: u32) -> Result<StateVector> {
        self.check_id(id)?;
        Ok(embed_unchecked(
            &self.circuit,
            &self.tokens[id as usize],
            &self.shared,
        ))
    }

    /// Every token's state, in id order.
    pub fn embed_all(&self) -> Vec<StateVector> {
        self.tokens
            .par_iter()
            .map(|t| embed_unchecked(&self.circuit, t, &self.shared))
            .collect()
    }

    pub fn fidelity(&self, a: u32, b: u32) -> Result<f64> {
        let (sa, sb) = (self.embed(a)?, self.embed(b)?);
        Ok(inner_unchecked(sa.amplitudes(), sb.amplitudes()).norm_sqr())
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            CHECKPOINT_VERSION,
            self.circuit.num_qubits() as u32,
            self.circuit.num_blocks() as u32,
            self.circuit.entanglement().code(),
            self.tokens.len() as u32,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        let mut put = |v: f64| out.write_all(&v.to_le_bytes());
        for &a in &self.shared.a {
            put(a)?;
        }
        for t in &self.tokens {
            for &v in t.alpha.iter().chain(&t.z) {
                put(v)?;
            }
            put(t.x)?;
        }
        out.write_all(&self.head.kind.code().to_le_bytes())?;
        for v in [
            self.head.beta,
            self.head.alpha,
            self.head.b,
            self.head.epsilon,
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let nq = read_u32(&mut input)? as usize;
        let nb = read_u32(&mut input)? as usize;
        let ent = Entanglement::from_code(read_u32(&mut input)?)?;
        let vocab_size = read_u32(&mut input)? as usize;
        let circuit = CircuitConfig::new(nq, nb, ent)
            .map_err(|e| Error::Format(format!("bad circuit header: {e}")))?;
        let n = circuit.layer_size();

        let shared = SharedParams {
            a: read_f64s(&mut input, n)?,
        };
        let mut tokens = Vec::with_capacity(vocab_size);
        for _ in 0..vocab_size {
            let alpha = read_f64s(&mut input, n)?;
            let z = read_f64s(&mut input, n)?;
            let x = read_f64(&mut input)?;
            tokens.push(TokenParams { alpha, z, x });
        }
        let kind = HeadKind::from_code(read_u32(&mut input)?)?;
        let head = HeadConfig {
            kind,
            beta: read_f64(&mut input)?,
            alpha: read_f64(&mut input)?,
            b: read_f64(&mut input)?,
            epsilon: read_f64(&mut input)?,
        };
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes in checkpoint",
                rest.len()
            )));
        }
        let model = Self {
            circuit,
            shared,
            tokens,
            head,
        };
        model
            .validate()
            .map_err(|e| Error::Format(format!("invalid checkpoint contents: {e}")))?;
        Ok(model)
    }

    /// Writes the checkpoint and its `token<TAB>id` sidecar.
    pub fn save(&self, path: &Path, tokens: &[String]) -> Result<()> {
        if tokens.len() != self.tokens.len() {
            return Err(Error::Shape(format!(
                "{} token strings for a {}-token model",
                tokens.len(),
                self.tokens.len()
            )));
        }
        let mut out = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut out)?;
        out.flush()?;
        let mut side = BufWriter::new(File::create(sidecar_path(path))?);
        for (id, t) in tokens.iter().enumerate() {
            writeln!(side, "{t}\t{id}")?;
        }
        side.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Lexicon)> {
        let model = Self::read_checkpoint(BufReader::new(File::open(path)?))?;
        let lexicon = Lexicon::read_sidecar(BufReader::new(File::open(sidecar_path(path))?))?;
        if lexicon.len() != model.vocab_size() {
            return Err(Error::Format(format!(
                "sidecar lists {} tokens, checkpoint has {}",
                lexicon.len(),
                model.vocab_size()
            )));
        }
        Ok((model, lexicon))
    }
}

/// `<checkpoint>.tokens.tsv`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".tokens.tsv");
    PathBuf::from(s)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(input)).collect()
}

/// Token strings of a model, indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Lexicon {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), id as u32).is_some() {
                return Err(Error::Format(format!("duplicate token '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn read_sidecar<R: BufRead>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, id) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("sidecar line {}: missing tab", lineno + 1))
            })?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("sidecar line {}: bad id", lineno + 1)))?;
            rows.push((id, token.to_string()));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Format("sidecar ids are not dense from 0".into()));
        }
        Self::new(rows.into_iter().map(|r| r.1).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<&Vocabulary> for Lexicon {
    fn from(v: &Vocabulary) -> Self {
        Self::new(v.tokens().to_vec()).expect("vocabulary tokens are unique")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> Model {
        let cfg = CircuitConfig::new(3, 2, Entanglement::Linear).unwrap();
        Model::init(cfg, 4, HeadConfig::logit_fidelity(1.5, -0.25).unwrap(), 9).unwrap()
    }

    #[test]
    fn checkpoint_header_layout() {
        let m = small_model();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"QCWE");
        let words: Vec<u32> = buf[4..24]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 3, 2, 1, 4]);
        let n = 6;
        let expected_len = 24 + 8 * n + 4 * 8 * (2 * n + 1) + 4 + 4 * 8;
        assert_eq!(buf.len(), expected_len);
        let a0 = f64::from_le_bytes(buf[24..32].try_into().unwrap());
        assert_eq!(a0, m.shared.a[0]);
        assert_eq!(Model::read_checkpoint(&buf[..]).unwrap(), m);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let m = small_model();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert!(matches!(
            Model::read_checkpoint(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Model::read_checkpoint(&bad[..]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Model::read_checkpoint(&extra[..]).is_err());
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qcwe");
        let m = small_model();
        let names: Vec<String> = ["w", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
        m.save(&path, &names).unwrap();
        let side = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert_eq!(side, "w\t0\nx\t1\ny\t2\nz\t3\n");
        let (back, lex) = Model::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(lex.id("y"), Some(2));
        assert!(m.save(&path, &names[..2]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(small_model(), small_model());
        let f = small_model().fidelity(0, 0).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        assert!(small_model().embed(4).is_err());
    }
}

//! A small deterministic world shared by the service tests: toy corpora,
//! tiny trained models saved to disk and a config that names them.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use penwise::corrector::{train_null_tasks, CrfConfig, CrfModel};
use penwise::infill::{infill_corpus, MaskScheme};
use penwise::lm::{self, Objective, TrainConfig, TransformerConfig, Vocab};
use penwise::numerics::rng::seeded;
use penwise::numerics::FitOptions;
use penwise::polish::{format_pairs, skeleton_pairs, Annotated};
use penwise::store::{self, load_config, Config};
use tokio::sync::oneshot;

pub const SENTENCES: &[&str] = &[
    "the cat sat on the mat",
    "the dog ran in the park",
    "a small bird sang a song",
    "the old man read a book",
    "she saw red flowers on the grass",
    "we ate fresh bread at home",
    "the cat chased a small bird",
    "the dog slept on the mat",
    "he read the book at home",
    "they walked in the green park",
    "a bird sat on the old fence",
    "she ate the fresh bread",
];

pub const ADJECTIVES: &[&str] = &["small", "old", "red", "fresh", "green"];

/// Misspellings the toy corrector learns to undo.
pub const TYPOS: &[(&str, &str)] = &[
    ("the", "teh"),
    ("cat", "cta"),
    ("dog", "dgo"),
    ("bird", "brid"),
    ("book", "bok"),
    ("park", "prak"),
];

pub const EMBEDDINGS: &str = concat!(
    "small\t1.0 0.1 0.0 0.0\n",
    "little\t0.95 0.2 0.0 0.05\n",
    "tiny\t0.9 0.0 0.1 0.0\n",
    "big\t-1.0 0.1 0.0 0.0\n",
    "large\t-0.9 0.2 0.1 0.0\n",
    "cat\t0.0 1.0 0.1 0.0\n",
    "kitten\t0.1 0.9 0.2 0.0\n",
    "dog\t0.0 0.8 -0.5 0.0\n",
    "sat\t0.0 0.0 1.0 0.2\n",
    "rested\t0.1 0.0 0.9 0.3\n",
    "ran\t0.0 0.1 0.2 1.0\n",
    "the\t0.1 0.1 0.1 0.1\n",
    "on\t0.2 0.0 0.2 0.1\n",
    "mat\t0.0 0.3 0.1 0.4\n",
);

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn corpus() -> Vec<Vec<String>> {
    SENTENCES.iter().map(|s| words(s)).collect()
}

pub fn arch() -> TransformerConfig {
    TransformerConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_len: 32,
    }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        rho: 0.5,
        objective: Objective::SimCtg,
        epochs,
        batch_size: 4,
        seed: 3,
        learning_rate: 1e-2,
        max_steps: None,
    }
}

fn fit_opts(epochs: usize) -> FitOptions {
    FitOptions {
        epochs,
        batch_size: 4,
        learning_rate: 1e-2,
        seed: 3,
        ..FitOptions::default()
    }
}

/// Sentence with the typo form of every word in `at`.
pub fn misspell(s: &[String], at: &[usize]) -> Vec<String> {
    let mut out = s.to_vec();
    for &i in at {
        if let Some((_, t)) = TYPOS.iter().find(|(w, _)| *w == s[i]) {
            out[i] = t.to_string();
        }
    }
    out
}

pub fn correction_pairs() -> Vec<(Vec<String>, Vec<String>)> {
    let mut pairs = Vec::new();
    for s in corpus() {
        pairs.push((s.clone(), s.clone()));
        let typo_at: Vec<usize> = (0..s.len()).filter(|&i| TYPOS.iter().any(|(w, _)| *w == s[i])).collect();
        for &i in &typo_at {
            pairs.push((misspell(&s, &[i]), s.clone()));
        }
        if typo_at.len() > 1 {
            pairs.push((misspell(&s, &typo_at), s.clone()));
        }
    }
    pairs
}

pub fn annotations() -> Vec<Annotated> {
    corpus()
        .into_iter()
        .map(|tokens| {
            let modifiers = (0..tokens.len())
                .filter(|&i| ADJECTIVES.contains(&tokens[i].as_str()))
                .map(|i| (i, 1))
                .collect();
            Annotated {
                tokens,
                modifiers,
                pos: Vec::new(),
            }
        })
        .collect()
}

pub struct World {
    pub dir: PathBuf,
    pub config_path: PathBuf,
    pub config: Config,
}

/// Trains every model and writes it under the target's temp dir in a
/// folder named `name`. Output is identical on every call.
pub fn build_world(name: &str) -> World {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let c = corpus();

    let vocab = Vocab::from_words(c.iter().flatten()).unwrap();
    let cls = vocab.specials().cls;
    let seqs: Vec<_> = c
        .iter()
        .map(|s| {
            let mut ids = vocab.encode(s).unwrap();
            ids.push(cls);
            ids
        })
        .collect();
    let (m, _) = lm::train(vocab.clone(), arch(), &seqs, &train_cfg(40)).unwrap();
    store::save(&m, &dir.join("lm.efd")).unwrap();

    let seqs = infill_corpus(&vocab, &c, MaskScheme::Keywords { keywords: 2 }, 8, 5).unwrap();
    let (m, _) = lm::train(vocab.clone(), arch(), &seqs, &train_cfg(20)).unwrap();
    store::save(&m, &dir.join("infill.efd")).unwrap();

    let pairs = skeleton_pairs(&annotations(), &mut seeded(7), 1.0).unwrap();
    let seqs = format_pairs(&vocab, &pairs, arch().max_len).unwrap();
    let (m, _) = lm::train(vocab.clone(), arch(), &seqs, &train_cfg(40)).unwrap();
    store::save(&m, &dir.join("expand.efd")).unwrap();

    let ids: Vec<_> = c.iter().map(|s| vocab.encode(s).unwrap()).collect();
    let (m, _) = train_null_tasks(vocab.clone(), arch(), &ids, 400, 0.5, 0.5, &fit_opts(5)).unwrap();
    store::save(&m, &dir.join("null.efd")).unwrap();

    let pairs = correction_pairs();
    let cvocab = Vocab::from_words(pairs.iter().flat_map(|(x, y)| x.iter().chain(y))).unwrap();
    let ids: Vec<_> = pairs
        .iter()
        .map(|(x, y)| (cvocab.encode(x).unwrap(), cvocab.encode(y).unwrap()))
        .collect();
    let (m, _) = CrfModel::train(cvocab, arch(), 4, &ids, &CrfConfig::default(), &fit_opts(30)).unwrap();
    store::save(&m, &dir.join("crf.efd")).unwrap();

    std::fs::write(dir.join("embeddings.txt"), EMBEDDINGS).unwrap();
    std::fs::write(dir.join("corpus.txt"), SENTENCES.join("\n") + "\n").unwrap();

    let toml = r#"
[decoder]
max_new_tokens = 12

[polish]
graph_topn = 3

[service]
bind = "127.0.0.1:0"
max_candidates = 8

[service.models]
lm = "lm.efd"
crf = "crf.efd"
null = "null.efd"
infill = "infill.efd"
expand = "expand.efd"
embeddings = "embeddings.txt"
corpus = "corpus.txt"
"#;
    let config_path = dir.join("penwise.toml");
    std::fs::write(&config_path, toml).unwrap();
    let config = load_config(&config_path).unwrap();
    World {
        dir,
        config_path,
        config,
    }
}

/// A server on an ephemeral port, running on its own thread.
pub struct Server {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), String>>>,
}

impl Server {
    pub fn start(config: Config) -> Self {
        let (tx, rx) = mpsc::channel();
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                penwise_service::http::serve_on(listener, config, async {
                    let _ = stopped.await;
                })
                .await
            })
        });
        let addr = rx.recv().unwrap();
        Self {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Polls health until it answers 200.
    pub fn wait_ready(&mut self) {
        let client = reqwest::blocking::Client::new();
        let deadline = Instant::now() + Duration::from_secs(60);
        while Instant::now() < deadline {
            if self.thread.as_ref().is_some_and(|t| t.is_finished()) {
                let t = self.thread.take().expect("thread");
                panic!("server exited before becoming ready: {:?}", t.join().expect("server thread"));
            }
            if let Ok(r) = client.get(self.url("/v1/health")).send() {
                if r.status() == 200 {
                    return;
                }
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        panic!("server at {} never became ready", self.addr);
    }

    /// Stops the server and returns how `serve_on` ended.
    pub fn stop(mut self) -> Result<(), String> {
        self.finish()
    }

    /// Waits for the server to stop on its own.
    pub fn stop_when_done(mut self) -> Result<(), String> {
        self.thread.take().expect("running").join().expect("server thread")
    }

    fn finish(&mut self) -> Result<(), String> {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("server thread"),
            None => Ok(()),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.finish();
    }
}

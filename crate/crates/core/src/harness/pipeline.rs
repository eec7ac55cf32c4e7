use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Subcommand, ValueEnum};

use crate::classify::{
    evaluate_domain_generalization, read_labels_tsv, write_accuracy_tsv, LabeledSet,
};
use crate::descriptor::{
    aggregate_sum, apply_whitening, extract_batch, extract_batch_single, learn_whitening,
    load_whitening, save_whitening, DescriptorFile, EdgeMacSet,
};
use crate::edgemap::{detect_edges_fallback, preprocess_sketch, EdgeMap, Raster, Sketch};
use crate::error::{Error, Result};
use crate::harness::RunConfig;
use crate::net::{init_weights, load_weights, load_weights_for, save_weights, Descriptor};
use crate::retrieval::{
    build_knn_graph, combine_graphs, diffusion_rerank, evaluate_acc_at_k, evaluate_map, load_graph,
    read_rankings_tsv, save_graph, search_all, search_multi_all, write_rankings_tsv, Index,
    RankedList,
};
use crate::training::{load_training_set, train, write_history_csv};

/// How `extract` describes each input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractMode {
    /// All ten pyramid instances per item.
    Sets,
    /// The ten instances summed into one descriptor.
    Sum,
    /// One descriptor of the resized map, no pyramid.
    Single,
}

/// One pipeline stage. Stages read and write files, so they compose.
#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Gradient-magnitude edge maps of grayscale PGM images.
    Edges { inputs: Vec<PathBuf> },
    /// Thin and re-dilate binary sketches to a uniform stroke width.
    SketchPrep { inputs: Vec<PathBuf> },
    /// Fine-tune a network on a dataset manifest.
    Train {
        manifest: PathBuf,
        /// Start from these weights instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Describe edge maps with a trained network.
    Extract {
        #[arg(long)]
        weights: PathBuf,
        /// Edge maps; the file stem becomes the item id.
        inputs: Vec<PathBuf>,
        /// TSV of `id path` rows, paths relative to the list file.
        #[arg(long)]
        list: Option<PathBuf>,
        /// Inputs are binary sketches.
        #[arg(long)]
        sketch: bool,
        #[arg(long, value_enum, default_value = "sum")]
        mode: ExtractMode,
        #[arg(short, long, default_value = "descriptors.emdc")]
        output: String,
    },
    /// Learn a whitening from matching pairs, or apply a learned one.
    Whiten {
        #[arg(long)]
        descriptors: PathBuf,
        /// TSV of matching `id id` pairs to learn from.
        #[arg(
            long,
            conflicts_with = "transform",
            required_unless_present = "transform"
        )]
        pairs: Option<PathBuf>,
        #[arg(long)]
        transform: Option<PathBuf>,
        #[arg(short, long, default_value = "whitened.emdc")]
        output: String,
    },
    /// Build a searchable index from a descriptor file.
    Index {
        descriptors: PathBuf,
        #[arg(short, long, default_value = "index.emix")]
        output: String,
    },
    /// Rank the index for every query descriptor.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Overrides `search.k`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(short, long, default_value = "rankings.tsv")]
        output: String,
    },
    /// Mutual kNN affinity graph over an index, optionally combined with a second.
    Graph {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        second: Option<PathBuf>,
        #[arg(short, long, default_value = "graph.emgr")]
        output: String,
    },
    /// Re-rank search results by diffusion on a graph.
    Diffuse {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// The index the graph was built from, for node ids.
        #[arg(long)]
        index: PathBuf,
        #[arg(short, long, default_value = "diffused.tsv")]
        output: String,
    },
    /// mAP and acc@K of rankings against relevance judgements.
    EvalRetrieval {
        #[arg(long)]
        rankings: PathBuf,
        /// TSV of `query item` rows; the first item of a query is its true match.
        #[arg(long)]
        relevance: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10")]
        k: Vec<usize>,
        #[arg(short, long, default_value = "retrieval.tsv")]
        output: String,
    },
    /// Domain-generalization accuracy of a linear classifier.
    EvalClassify {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Without this, every domain is held out in turn.
        #[arg(long, value_delimiter = ',', requires = "test_domain")]
        train_domains: Vec<String>,
        #[arg(long)]
        test_domain: Option<String>,
        #[arg(short, long, default_value = "classify.tsv")]
        output: String,
    },
    /// Collect TSV and CSV results into one markdown report.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(short, long, default_value = "report.md")]
        output: String,
    },
}

impl Command {
    /// Files the command reads directly.
    pub fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::Edges { inputs }
            | Command::SketchPrep { inputs }
            | Command::Report { inputs, .. } => v.extend(inputs.iter().map(PathBuf::as_path)),
            Command::Train { manifest, init } => {
                v.push(manifest);
                v.extend(init.as_deref());
            }
            Command::Extract {
                weights,
                inputs,
                list,
                ..
            } => {
                v.push(weights);
                v.extend(inputs.iter().map(PathBuf::as_path));
                v.extend(list.as_deref());
            }
            Command::Whiten {
                descriptors,
                pairs,
                transform,
                ..
            } => {
                v.push(descriptors);
                v.extend(pairs.as_deref());
                v.extend(transform.as_deref());
            }
            Command::Index { descriptors, .. } => v.push(descriptors),
            Command::Search { index, queries, .. } => {
                v.extend([index.as_path(), queries.as_path()])
            }
            Command::Graph { index, second, .. } => {
                v.push(index);
                v.extend(second.as_deref());
            }
            Command::Diffuse {
                rankings,
                graph,
                index,
                ..
            } => v.extend([rankings.as_path(), graph.as_path(), index.as_path()]),
            Command::EvalRetrieval {
                rankings,
                relevance,
                ..
            } => v.extend([rankings.as_path(), relevance.as_path()]),
            Command::EvalClassify {
                descriptors,
                labels,
                ..
            } => v.extend([descriptors.as_path(), labels.as_path()]),
        }
        v
    }
}

fn require_files<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes an artifact under the output directory and records its path.
struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut sink = BufWriter::new(file);
        f(&mut sink)?;
        sink.flush().map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn text(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        self.write(name, |w| f(w).map_err(|e| Error::io(&path, e)))
    }
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Input(format!("cannot derive an id from {}", path.display())))
}

fn read_pgm_map(path: &Path) -> Result<EdgeMap> {
    Ok(Raster::read(path)?.to_edge_map())
}

/// `(id, path)` rows of an extraction list, paths resolved against its directory.
fn read_list(list: &Path) -> Result<Vec<(String, PathBuf)>> {
    let base = list.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in read_text(list)?.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, path] = fields[..] else {
            return Err(Error::Format(format!(
                "{} line {}: expected id and path",
                list.display(),
                n + 1
            )));
        };
        out.push((id.to_string(), base.join(path)));
    }
    Ok(out)
}

/// Whitespace-separated two-column rows, comments and blanks skipped.
fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [a, b] = fields[..] else {
            return Err(Error::Format(format!(
                "{} line {}: expected two ids",
                path.display(),
                n + 1
            )));
        };
        out.push((a.to_string(), b.to_string()));
    }
    Ok(out)
}

fn read_descriptors(path: &Path) -> Result<DescriptorFile> {
    DescriptorFile::read(open(path)?)
}

fn read_index(path: &Path) -> Result<Index> {
    Index::read(open(path)?)
}

/// One unit descriptor per item, summing instance sets.
fn single_descriptors(file: &DescriptorFile) -> Result<Vec<Descriptor>> {
    if file.per_item() == 1 {
        file.descriptors()
    } else {
        file.sets()?.iter().map(aggregate_sum).collect()
    }
}

fn hash_line(hash: u64) -> String {
    format!("config_hash={hash:016x}")
}

/// Execute one stage. Every input file is checked before any work starts.
/// Returns the paths of the artifacts written under `out`.
pub fn run_pipeline(command: &Command, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    require_files(command.inputs())?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = cfg.hash();
    let mut outputs = Outputs {
        dir: out,
        written: Vec::new(),
    };

    match command {
        Command::Edges { inputs } | Command::SketchPrep { inputs } => {
            let sketches = matches!(command, Command::SketchPrep { .. });
            let mut names = HashSet::new();
            for path in inputs {
                let name = format!("{}.pgm", stem(path)?);
                if !names.insert(name.clone()) {
                    return Err(Error::Input(format!("two inputs would both write {name}")));
                }
            }
            for path in inputs {
                let raster = Raster::read(path)?;
                let map = if sketches {
                    preprocess_sketch(&Sketch::from_drawing(&raster.to_edge_map()))
                } else {
                    detect_edges_fallback(&raster)?
                };
                let bytes = Raster::from_edge_map(&map).encode_with_comment(&hash_line(hash));
                outputs.write(&format!("{}.pgm", stem(path)?), |w| {
                    w.write_all(&bytes).map_err(|e| Error::io(path, e))
                })?;
            }
        }
        Command::Train { manifest, init } => {
            let network = cfg.network.network();
            let initial = match init {
                Some(p) => load_weights_for(open(p)?, &network)?,
                None => init_weights(&network, cfg.seed)?,
            };
            let tc = cfg.train_config();
            let data = load_training_set(manifest, &initial, tc.train_max_side)?;
            let outcome = train(initial, &data, &tc)?;
            outputs.write("weights.emwt", |w| save_weights(&outcome.weights, hash, w))?;
            outputs.text("history.csv", |w| {
                write_history_csv(&outcome.history, Some(hash), w)
            })?;
        }
        Command::Extract {
            weights,
            inputs,
            list,
            sketch,
            mode,
            output,
        } => {
            let mut items: Vec<(String, PathBuf)> = Vec::new();
            for p in inputs {
                items.push((stem(p)?, p.clone()));
            }
            if let Some(l) = list {
                items.extend(read_list(l)?);
            }
            if items.is_empty() {
                return Err(Error::Input("extract needs at least one edge map".into()));
            }
            require_files(items.iter().map(|(_, p)| p.as_path()))?;
            let (net, _) = load_weights(open(weights)?)?;
            let maps = items
                .iter()
                .map(|(_, p)| read_pgm_map(p))
                .collect::<Result<Vec<_>>>()?;
            let ids: Vec<String> = items.into_iter().map(|(id, _)| id).collect();
            let file = match mode {
                ExtractMode::Sets => DescriptorFile::from_sets(
                    ids,
                    &extract_batch(&net, &maps, *sketch, &cfg.extract)?,
                )?,
                ExtractMode::Sum => {
                    let sets = extract_batch(&net, &maps, *sketch, &cfg.extract)?;
                    let sums = sets.iter().map(aggregate_sum).collect::<Result<Vec<_>>>()?;
                    DescriptorFile::from_descriptors(ids, &sums)?
                }
                ExtractMode::Single => DescriptorFile::from_descriptors(
                    ids,
                    &extract_batch_single(&net, &maps, *sketch, &cfg.extract)?,
                )?,
            };
            outputs.write(output, |w| file.write(w))?;
        }
        Command::Whiten {
            descriptors,
            pairs,
            transform,
            output,
        } => {
            let file = read_descriptors(descriptors)?;
            let t = match (pairs, transform) {
                (Some(pairs), _) => {
                    let position: HashMap<&str, usize> = file
                        .ids()
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.as_str(), i))
                        .collect();
                    let mut training = Vec::new();
                    for (a, b) in read_pairs(pairs)? {
                        let find = |id: &str| {
                            position.get(id).copied().ok_or_else(|| {
                                Error::Input(format!(
                                    "pair item `{id}` is not in the descriptor file"
                                ))
                            })
                        };
                        let (i, j) = (find(&a)?, find(&b)?);
                        for k in 0..file.per_item() {
                            training.push((file.descriptor(i, k)?, file.descriptor(j, k)?));
                        }
                    }
                    let t = learn_whitening(&training)?;
                    outputs.write("whitening.emwh", |w| save_whitening(&t, hash, w))?;
                    t
                }
                (None, Some(path)) => load_whitening(open(path)?)?,
                (None, None) => {
                    return Err(Error::Input("whiten needs --pairs or --transform".into()))
                }
            };
            let mut vectors = Vec::with_capacity(file.len() * file.per_item());
            for i in 0..file.len() {
                for k in 0..file.per_item() {
                    vectors.push(apply_whitening(&t, &file.descriptor(i, k)?)?);
                }
            }
            let ids = file.ids().to_vec();
            let whitened = if file.per_item() == 1 {
                DescriptorFile::from_descriptors(ids, &vectors)?
            } else {
                let sets: Vec<EdgeMacSet> = vectors
                    .chunks(file.per_item())
                    .map(|c| EdgeMacSet::new(c.to_vec()))
                    .collect::<Result<_>>()?;
                DescriptorFile::from_sets(ids, &sets)?
            };
            outputs.write(output, |w| whitened.write(w))?;
        }
        Command::Index {
            descriptors,
            output,
        } => {
            let index = Index::new(read_descriptors(descriptors)?)?;
            outputs.write(output, |w| index.write(w))?;
        }
        Command::Search {
            index,
            queries,
            k,
            output,
        } => {
            let index = read_index(index)?;
            let queries = read_descriptors(queries)?;
            let k = k.unwrap_or(cfg.search.k);
            let rankings = if index.per_item() == 1 {
                search_all(&single_descriptors(&queries)?, &index, k)?
            } else {
                search_multi_all(&queries.sets()?, &index, k)?
            };
            outputs.text(output, |w| {
                write_rankings_tsv(queries.ids(), &rankings, Some(hash), w)
            })?;
        }
        Command::Graph {
            index,
            second,
            output,
        } => {
            let d = &cfg.diffusion;
            let first = read_index(index)?;
            let mut graph =
                build_knn_graph(&single_descriptors(first.descriptors())?, d.k, d.gamma)?;
            if let Some(path) = second {
                let other = read_index(path)?;
                if other.ids() != first.ids() {
                    return Err(Error::Input(
                        "the two indexes must list the same items in the same order".into(),
                    ));
                }
                let g2 = build_knn_graph(&single_descriptors(other.descriptors())?, d.k, d.gamma)?;
                graph = combine_graphs(&graph, &g2)?;
            }
            outputs.write(output, |w| save_graph(&graph, hash, w))?;
        }
        Command::Diffuse {
            rankings,
            graph,
            index,
            output,
        } => {
            let (queries, lists) = read_rankings_tsv(open(rankings)?)?;
            let graph = load_graph(open(graph)?)?;
            let index = read_index(index)?;
            let d = &cfg.diffusion;
            let reranked = lists
                .iter()
                .map(|l| diffusion_rerank(l, index.ids(), &graph, d.alpha, d.seed_k))
                .collect::<Result<Vec<_>>>()?;
            outputs.text(output, |w| {
                write_rankings_tsv(&queries, &reranked, Some(hash), w)
            })?;
        }
        Command::EvalRetrieval {
            rankings,
            relevance,
            k,
            output,
        } => {
            let (queries, lists) = read_rankings_tsv(open(rankings)?)?;
            let metrics = evaluate_rankings(&queries, &lists, &read_pairs(relevance)?, k)?;
            outputs.text(output, |w| {
                writeln!(w, "# {}", hash_line(hash))?;
                writeln!(w, "metric\tvalue")?;
                for (name, v) in &metrics {
                    writeln!(w, "{name}\t{v}")?;
                }
                Ok(())
            })?;
        }
        Command::EvalClassify {
            descriptors,
            labels,
            train_domains,
            test_domain,
            output,
        } => {
            let file = read_descriptors(descriptors)?;
            let vectors = single_descriptors(&file)?;
            let position: HashMap<&str, usize> = file
                .ids()
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            let mut data = LabeledSet::default();
            for (id, class, domain) in read_labels_tsv(open(labels)?)? {
                let &i = position.get(id.as_str()).ok_or_else(|| {
                    Error::Input(format!("labelled item `{id}` has no descriptor"))
                })?;
                data.push(id, vectors[i].as_slice().to_vec(), class, domain);
            }
            let experiments: Vec<(Vec<String>, String)> = match test_domain {
                Some(t) => vec![(train_domains.clone(), t.clone())],
                None => {
                    let all: BTreeSet<&String> = data.domains.iter().collect();
                    all.iter()
                        .map(|t| {
                            (
                                all.iter()
                                    .filter(|d| *d != t)
                                    .map(|d| (*d).clone())
                                    .collect(),
                                (*t).clone(),
                            )
                        })
                        .collect()
                }
            };
            let mut rows = Vec::with_capacity(experiments.len());
            for (train_on, test) in experiments {
                let acc = evaluate_domain_generalization(&data, &train_on, &test, &cfg.classify)?;
                rows.push((train_on, test, acc));
            }
            outputs.text(output, |w| write_accuracy_tsv(&rows, Some(hash), w))?;
        }
        Command::Report { inputs, output } => {
            let mut body = format!("# Report\n\n{}\n", hash_line(hash));
            for path in inputs {
                body.push_str(&format!(
                    "\n## {}\n\n",
                    path.file_name().unwrap_or_default().to_string_lossy()
                ));
                body.push_str(&markdown_table(&read_text(path)?));
            }
            outputs.text(output, |w| w.write_all(body.as_bytes()))?;
        }
    }
    Ok(outputs.written)
}

/// `("mAP", v)` followed by `("acc@K", v)` for each `K`.
pub fn evaluate_rankings(
    queries: &[String],
    lists: &[RankedList],
    relevance: &[(String, String)],
    ks: &[usize],
) -> Result<Vec<(String, f64)>> {
    let mut relevant: HashMap<&str, (HashSet<String>, &str)> = HashMap::new();
    for (q, item) in relevance {
        relevant
            .entry(q.as_str())
            .or_insert_with(|| (HashSet::new(), item.as_str()))
            .0
            .insert(item.clone());
    }
    let mut sets = Vec::with_capacity(queries.len());
    let mut truth = Vec::with_capacity(queries.len());
    for q in queries {
        let (set, first) = relevant
            .get(q.as_str())
            .ok_or_else(|| Error::Input(format!("query `{q}` has no relevance judgements")))?;
        sets.push(set.clone());
        truth.push(first.to_string());
    }
    let mut out = vec![("mAP".to_string(), evaluate_map(lists, &sets)?)];
    for &k in ks {
        out.push((format!("acc@{k}"), evaluate_acc_at_k(lists, &truth, k)?));
    }
    Ok(out)
}

/// Tab- or comma-separated text as a markdown table; `#` lines are kept as notes.
fn markdown_table(text: &str) -> String {
    let mut notes = String::new();
    let mut rows: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        if let Some(note) = line.strip_prefix('#') {
            notes.push_str(&format!("{}\n\n", note.trim()));
        } else if !line.trim().is_empty() {
            let sep = if line.contains('\t') { '\t' } else { ',' };
            rows.push(line.split(sep).collect());
        }
    }
    let mut out = notes;
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
        if i == 0 {
            out.push_str(&format!("|{}\n", " --- |".repeat(row.len())));
        }
    }
    out
}

use std::fs;
use std::path::{Path, PathBuf};

use edgemac::descriptor::DescriptorFile;
use edgemac::edgemap::Raster;
use edgemac::harness::{parse_config, run_pipeline, Command, ExtractMode, RunConfig};
use edgemac::net::{init_weights, load_weights, save_weights};
use edgemac::retrieval::{read_rankings_tsv, Index};
use edgemac::synth::{render_corpus, RenderConfig};
use edgemac::Error;

const SMALL: &str = "seed = 11\n\
[network]\nwidths = [4, 8]\n\
[extract]\nmax_side = 32\npad = 4\n\
[train]\nlr0 = 0.05\nmax_epochs = 2\nbatch = 10\ntrain_max_side = 32\n\
[diffusion]\nk = 3\nseed_k = 2\n";

fn small_cfg() -> RunConfig {
    parse_config(SMALL).unwrap()
}

fn write_weights(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let w = init_weights(&cfg.network.network(), cfg.seed).unwrap();
    let path = dir.join("init.emwt");
    save_weights(&w, cfg.hash(), fs::File::create(&path).unwrap()).unwrap();
    path
}

/// Render `per_class` maps of the first `classes` shapes as PGM files.
fn write_maps(
    dir: &Path,
    prefix: &str,
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Vec<(PathBuf, String)> {
    let cfg = RenderConfig {
        size: 32,
        ..Default::default()
    };
    render_corpus(prefix, per_class, false, &cfg, seed)
        .unwrap()
        .into_iter()
        .take(classes * per_class)
        .map(|item| {
            let path = dir.join(format!("{}.pgm", item.id));
            Raster::from_edge_map(&item.map).write(&path).unwrap();
            (path, item.model_id.clone())
        })
        .collect()
}

fn extract(weights: &Path, inputs: Vec<PathBuf>, mode: ExtractMode, output: &str) -> Command {
    Command::Extract {
        weights: weights.to_path_buf(),
        inputs,
        list: None,
        sketch: false,
        mode,
        output: output.into(),
    }
}

#[test]
fn extract_three_maps_then_search_clips_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let weights = write_weights(dir.path(), &cfg);
    let maps: Vec<PathBuf> = write_maps(dir.path(), "m", 3, 1, 1)
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let out = dir.path().join("out");

    let written = run_pipeline(
        &extract(&weights, maps, ExtractMode::Sum, "db.emdc"),
        &cfg,
        &out,
    )
    .unwrap();
    assert_eq!(written, vec![out.join("db.emdc")]);
    let file = DescriptorFile::read(fs::File::open(out.join("db.emdc")).unwrap()).unwrap();
    assert_eq!(file.len(), 3);
    assert_eq!(file.per_item(), 1);

    run_pipeline(
        &Command::Index {
            descriptors: out.join("db.emdc"),
            output: "db.emix".into(),
        },
        &cfg,
        &out,
    )
    .unwrap();
    let search = Command::Search {
        index: out.join("db.emix"),
        queries: out.join("db.emdc"),
        k: Some(5),
        output: "rankings.tsv".into(),
    };
    run_pipeline(&search, &cfg, &out).unwrap();
    let text = fs::read_to_string(out.join("rankings.tsv")).unwrap();
    assert!(text.starts_with(&format!("# config_hash={:016x}\n", cfg.hash())));
    let (queries, lists) = read_rankings_tsv(text.as_bytes()).unwrap();
    assert_eq!(queries.len(), 3);
    for (q, list) in queries.iter().zip(&lists) {
        assert_eq!(list.len(), 3);
        assert_eq!(list.ids().next().unwrap(), q);
    }
}

#[test]
fn sets_mode_stores_ten_instances_and_searches_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let weights = write_weights(dir.path(), &cfg);
    let maps: Vec<PathBuf> = write_maps(dir.path(), "m", 2, 2, 2)
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let out = dir.path().join("out");
    run_pipeline(
        &extract(&weights, maps, ExtractMode::Sets, "sets.emdc"),
        &cfg,
        &out,
    )
    .unwrap();
    let file = DescriptorFile::read(fs::File::open(out.join("sets.emdc")).unwrap()).unwrap();
    assert_eq!((file.len(), file.per_item()), (4, 10));
    run_pipeline(
        &Command::Index {
            descriptors: out.join("sets.emdc"),
            output: "sets.emix".into(),
        },
        &cfg,
        &out,
    )
    .unwrap();
    let index = Index::read(fs::File::open(out.join("sets.emix")).unwrap()).unwrap();
    assert_eq!(index.per_item(), 10);
    let search = Command::Search {
        index: out.join("sets.emix"),
        queries: out.join("sets.emdc"),
        k: None,
        output: "r.tsv".into(),
    };
    run_pipeline(&search, &cfg, &out).unwrap();
    let (_, lists) = read_rankings_tsv(
        fs::File::open(out.join("r.tsv"))
            .map(std::io::BufReader::new)
            .unwrap(),
    )
    .unwrap();
    assert!(lists.iter().all(|l| l.len() == 4));
}

#[test]
fn eval_retrieval_on_hand_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let rankings = dir.path().join("r.tsv");
    fs::write(
        &rankings,
        "q\t1\ta\t0.9\nq\t2\tx\t0.8\nq\t3\tb\t0.7\nq\t4\ty\t0.6\n",
    )
    .unwrap();
    let relevance = dir.path().join("rel.tsv");
    fs::write(&relevance, "q\ta\nq\tb\n").unwrap();
    let cmd = Command::EvalRetrieval {
        rankings,
        relevance,
        k: vec![1, 10],
        output: "metrics.tsv".into(),
    };
    run_pipeline(&cmd, &RunConfig::default(), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    let map: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("mAP\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((map - 0.8333).abs() < 1e-4);
    assert!(text.contains("acc@1\t1\n"));
}

#[test]
fn extraction_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let weights = write_weights(dir.path(), &cfg);
    let maps: Vec<PathBuf> = write_maps(dir.path(), "m", 4, 2, 3)
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let mut outputs = Vec::new();
    for threads in [1, 3, 1] {
        let out = dir.path().join(format!("out{}", outputs.len()));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            run_pipeline(
                &extract(&weights, maps.clone(), ExtractMode::Sets, "d.emdc"),
                &cfg,
                &out,
            )
            .unwrap();
            run_pipeline(
                &Command::Index {
                    descriptors: out.join("d.emdc"),
                    output: "d.emix".into(),
                },
                &cfg,
                &out,
            )
            .unwrap();
        });
        outputs.push((
            fs::read(out.join("d.emdc")).unwrap(),
            fs::read(out.join("d.emix")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn corrupt_artifacts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.emdc");
    fs::write(&bogus, b"NOPE\x01\x00\x00\x00").unwrap();
    match run_pipeline(
        &Command::Index {
            descriptors: bogus,
            output: "i".into(),
        },
        &RunConfig::default(),
        dir.path(),
    ) {
        Err(Error::Format(msg)) => assert!(msg.contains("magic"), "{msg}"),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn missing_list_entries_are_caught_before_loading_weights() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("list.tsv");
    fs::write(&list, "a\tmissing.pgm\n").unwrap();
    // the weights file is junk; reaching it would give a format error instead
    let weights = dir.path().join("w.emwt");
    fs::write(&weights, b"junk").unwrap();
    let cmd = Command::Extract {
        weights,
        inputs: vec![],
        list: Some(list),
        sketch: false,
        mode: ExtractMode::Sum,
        output: "d.emdc".into(),
    };
    assert!(matches!(
        run_pipeline(&cmd, &RunConfig::default(), dir.path()),
        Err(Error::Io { .. })
    ));
}

#[test]
fn train_from_manifest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let mut manifest = String::new();
    for (role, prefix, per_class) in [
        ("query", "q", 2),
        ("positive-pool", "p", 2),
        ("negative-pool", "n", 1),
        ("validation", "v", 2),
    ] {
        for (path, model) in write_maps(dir.path(), prefix, 10, per_class, 4) {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            let id = name.trim_end_matches(".pgm");
            manifest.push_str(&format!("{id} {name} {model} {role}\n"));
        }
    }
    let manifest_path = dir.path().join("train.txt");
    fs::write(&manifest_path, manifest).unwrap();
    let mut weights = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let written = run_pipeline(
            &Command::Train {
                manifest: manifest_path.clone(),
                init: None,
            },
            &cfg,
            &out,
        )
        .unwrap();
        assert_eq!(
            written,
            vec![out.join("weights.emwt"), out.join("history.csv")]
        );
        let history = fs::read_to_string(out.join("history.csv")).unwrap();
        assert_eq!(history.lines().count(), 2 + 2);
        weights.push(fs::read(out.join("weights.emwt")).unwrap());
    }
    assert_eq!(weights[0], weights[1]);
    let (_, header) = load_weights(&weights[0][..]).unwrap();
    assert_eq!(header.config_hash, cfg.hash());
}

#[test]
fn edges_and_sketch_prep_write_headed_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let mut pixels = vec![0u8; 16 * 16];
    for y in 4..12 {
        for x in 6..9 {
            pixels[y * 16 + x] = 255;
        }
    }
    let input = dir.path().join("stroke.pgm");
    Raster::new(16, 16, pixels).unwrap().write(&input).unwrap();
    let cfg = RunConfig::default();
    for (cmd, sub) in [
        (
            Command::Edges {
                inputs: vec![input.clone()],
            },
            "e",
        ),
        (
            Command::SketchPrep {
                inputs: vec![input.clone()],
            },
            "s",
        ),
    ] {
        let out = dir.path().join(sub);
        run_pipeline(&cmd, &cfg, &out).unwrap();
        let bytes = fs::read(out.join("stroke.pgm")).unwrap();
        assert!(String::from_utf8_lossy(&bytes[..40])
            .contains(&format!("config_hash={:016x}", cfg.hash())));
        let map = Raster::decode(&bytes).unwrap().to_edge_map();
        assert_eq!((map.width(), map.height()), (16, 16));
        assert!(map.sum() > 0.0);
    }
}

#[test]
fn whiten_graph_diffuse_classify_report_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let weights = write_weights(dir.path(), &cfg);
    let maps = write_maps(dir.path(), "m", 3, 4, 5);
    let out = dir.path().join("out");
    let paths: Vec<PathBuf> = maps.iter().map(|(p, _)| p.clone()).collect();
    run_pipeline(
        &extract(&weights, paths, ExtractMode::Sum, "d.emdc"),
        &cfg,
        &out,
    )
    .unwrap();

    let ids: Vec<String> = maps
        .iter()
        .map(|(p, _)| p.file_stem().unwrap().to_string_lossy().to_string())
        .collect();
    let mut pairs = String::new();
    for c in 0..3 {
        for i in 0..3 {
            pairs.push_str(&format!("{}\t{}\n", ids[c * 4 + i], ids[c * 4 + i + 1]));
        }
    }
    fs::write(dir.path().join("pairs.tsv"), pairs).unwrap();
    let whiten = Command::Whiten {
        descriptors: out.join("d.emdc"),
        pairs: Some(dir.path().join("pairs.tsv")),
        transform: None,
        output: "w.emdc".into(),
    };
    let written = run_pipeline(&whiten, &cfg, &out).unwrap();
    assert_eq!(
        written,
        vec![out.join("whitening.emwh"), out.join("w.emdc")]
    );

    run_pipeline(
        &Command::Index {
            descriptors: out.join("w.emdc"),
            output: "w.emix".into(),
        },
        &cfg,
        &out,
    )
    .unwrap();
    run_pipeline(
        &Command::Search {
            index: out.join("w.emix"),
            queries: out.join("w.emdc"),
            k: None,
            output: "r.tsv".into(),
        },
        &cfg,
        &out,
    )
    .unwrap();
    run_pipeline(
        &Command::Graph {
            index: out.join("w.emix"),
            second: None,
            output: "g.emgr".into(),
        },
        &cfg,
        &out,
    )
    .unwrap();
    run_pipeline(
        &Command::Diffuse {
            rankings: out.join("r.tsv"),
            graph: out.join("g.emgr"),
            index: out.join("w.emix"),
            output: "dr.tsv".into(),
        },
        &cfg,
        &out,
    )
    .unwrap();
    let (_, lists) = read_rankings_tsv(
        fs::File::open(out.join("dr.tsv"))
            .map(std::io::BufReader::new)
            .unwrap(),
    )
    .unwrap();
    assert!(lists.iter().all(|l| l.len() == 12));

    let mut labels = String::new();
    for (k, (id, (_, model))) in ids.iter().zip(&maps).enumerate() {
        labels.push_str(&format!(
            "{id}\t{model}\t{}\n",
            if k % 4 < 2 { "photo" } else { "sketch" }
        ));
    }
    fs::write(dir.path().join("labels.tsv"), labels).unwrap();
    let classify = Command::EvalClassify {
        descriptors: out.join("d.emdc"),
        labels: dir.path().join("labels.tsv"),
        train_domains: vec![],
        test_domain: None,
        output: "c.tsv".into(),
    };
    run_pipeline(&classify, &cfg, &out).unwrap();
    let c = fs::read_to_string(out.join("c.tsv")).unwrap();
    assert_eq!(c.lines().count(), 1 + 1 + 2);
    assert!(c.contains("sketch\tphoto\t") && c.contains("photo\tsketch\t"));

    let report = Command::Report {
        inputs: vec![out.join("c.tsv")],
        output: "report.md".into(),
    };
    run_pipeline(&report, &cfg, &out).unwrap();
    assert!(fs::read_to_string(out.join("report.md"))
        .unwrap()
        .contains("| train_domains | test_domain | accuracy |"));
}

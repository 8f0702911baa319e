use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use serde_json::Value;
use solidarity_cli::run::validate_report;
use solidarity_cli::run_cli;
use solidarity_core::model::{EndpointConfig, ExternalEndpoint, Transport};
use solidarity_core::{LabelCoarse, Lang, Tweet};
use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["solidarity"];
    full.extend_from_slice(args);
    run_cli(full)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Owned path as a `'static` argument string.
fn fx(name: &str) -> &'static str {
    leak(fixtures().join(name))
}

fn leak(path: PathBuf) -> &'static str {
    Box::leak(path.to_str().unwrap().to_string().into_boxed_str())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write(dir: &TempDir, name: &str, content: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, content).unwrap();
    path
}

const CORPUS: &str = r#"{"id":"1","text":"welcome refugees #refugeeswelcome","lang":"en","created_at":"2020-03-01T10:00:00Z"}
{"id":"2","text":"close the borders #closetheborders","lang":"en","created_at":"2020-03-01T12:00:00Z"}
{"id":"3","text":"Grenzen auf #refugeeswelcome #moria","lang":"de","created_at":"2020-03-02T09:00:00Z"}
"#;

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["--version"]), 0);
    assert_eq!(cli(&[]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    let out = dir.path().join("out.jsonl");
    assert_eq!(cli(&["ingest", "--input", "/nonexistent/corpus.jsonl", "--output", p(&out)]), 1);

    let bad = write(&dir, "bad.jsonl", &format!("{CORPUS}{{not json\n"));
    assert_eq!(cli(&["ingest", "--input", p(&bad), "--output", p(&out)]), 2);
    assert!(!out.exists(), "no output on failure");
    assert_eq!(cli(&["ingest", "--input", p(&bad), "--output", p(&out), "--lenient"]), 0);
    assert_eq!(read_jsonl(&out).len(), 3);
    let report = read_json(&dir.path().join("out.jsonl.report.json"));
    validate_report(&report).unwrap();
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);

    let corpus = write(&dir, "c.jsonl", CORPUS);
    let ann = write(&dir, "a.csv", "tweet_id,annotator_id,label,stage\n1,x,0,\n");
    let agg = dir.path().join("h.jsonl");
    let args = ["aggregate", "--corpus", p(&corpus), "--crowd", p(&ann), "--granularity", "5", "--output", p(&agg)];
    assert_eq!(cli(&args), 1);
    assert_eq!(cli(&["aggregate", "--corpus", p(&corpus), "--output", p(&agg)]), 1);
}

#[test]
fn report_digests_match_outputs() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.jsonl", CORPUS);
    let out = dir.path().join("norm.jsonl");
    let report = dir.path().join("r.json");
    assert_eq!(cli(&["--report", p(&report), "ingest", "--input", p(&corpus), "--output", p(&out)]), 0);
    let r = read_json(&report);
    validate_report(&r).unwrap();
    let output = &r["outputs"][0];
    let data = std::fs::read(&out).unwrap();
    assert_eq!(output["bytes"], data.len() as u64);
    use sha2::Digest;
    assert_eq!(output["sha256"], hex::encode(sha2::Sha256::digest(&data)));
    assert_eq!(r["summary"]["tweets"], 3);
}

#[test]
fn hashtag_expansion_and_filter() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.jsonl", CORPUS);
    let out = dir.path().join("tags.json");
    let filtered = dir.path().join("f.jsonl");
    let args = [
        "hashtags", "--corpus", p(&corpus), "--seeds", "refugeeswelcome", "--threshold", "1", "--output", p(&out),
        "--filtered", p(&filtered),
    ];
    assert_eq!(cli(&args), 0);
    let v = read_json(&out);
    assert_eq!(v["expansion"][0]["hashtag"], "moria");
    let ids: Vec<String> = read_jsonl(&filtered).iter().map(|r| r["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, ["1", "3"]);
}

#[test]
fn aggregate_majority_example() {
    let dir = TempDir::new().unwrap();
    let corpus = write(&dir, "c.jsonl", CORPUS);
    // tweet 1: experts agree on S; tweet 2: crowd [S,S,A] → S
    let expert = write(&dir, "e.csv", "tweet_id,annotator_id,label,stage\n1,e1,0,\n1,e2,0,\n1,e3,1,\n");
    let crowd = write(
        &dir,
        "c.csv",
        "tweet_id,annotator_id,label,stage\n2,c1,0,\n2,c2,0,\n2,c3,1,\n1,c1,0,\n1,c2,0,\n1,c3,2,\n",
    );
    let out = dir.path().join("human.jsonl");
    let args = ["aggregate", "--corpus", p(&corpus), "--expert", p(&expert), "--crowd", p(&crowd), "--output", p(&out)];
    assert_eq!(cli(&args), 0);
    let rows = read_jsonl(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0]["id"].as_str(), rows[0]["label"].as_str(), rows[0]["provenance"].as_str()), (Some("1"), Some("S"), Some("expert")));
    assert_eq!((rows[1]["id"].as_str(), rows[1]["label"].as_str(), rows[1]["provenance"].as_str()), (Some("2"), Some("S"), Some("crowd")));
}

#[test]
fn agreement_on_fixture_experts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("agreement.json");
    let expert = fixtures().join("expert.csv");
    assert_eq!(cli(&["agreement", "--annotations", p(&expert), "--fleiss", "--output", p(&out)]), 0);
    let v = read_json(&out);
    let k = v["mean_pairwise_kappa"].as_f64().unwrap();
    assert!(k > 0.5 && k < 0.95, "{k}");
    assert!(v["fleiss_kappa"].as_f64().is_some());
    assert_eq!(v["annotators"], 4);
}

#[test]
fn eval_reference_confusion() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("eval.json");
    let cm = dir.path().join("cm.csv");
    let args = ["eval", "--confusion", fx("reference_confusion.csv"), "--output", p(&out), "--confusion-out", p(&cm)];
    assert_eq!(cli(&args), 0);
    let v = read_json(&out);
    assert!((v["macro_f1"].as_f64().unwrap() - 0.8464).abs() < 0.002);
    assert_eq!(v["n"], 170);
    assert_eq!(std::fs::read(&cm).unwrap(), std::fs::read(fixtures().join("reference_confusion.csv")).unwrap());
    assert_eq!(cli(&["eval", "--output", p(&out)]), 1);
}

#[test]
fn train_ensemble_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let pool_dir = dir.path().join("pool");
    let train = fixtures().join("separable_train.jsonl");
    let dev = fixtures().join("separable_dev.jsonl");
    let args = ["train", "--train", p(&train), "--dev", p(&dev), "--out-dir", p(&pool_dir), "--variants", "3", "--dim", "4096"];
    assert_eq!(cli(&args), 0);
    let pool = pool_dir.join("pool.json");
    assert_eq!(read_json(&pool)["members"].as_array().unwrap().len(), 3);

    let preds = dir.path().join("preds.jsonl");
    assert_eq!(cli(&["ensemble", "--pool", p(&pool), "--input", p(&dev), "--output", p(&preds)]), 0);
    assert_eq!(read_jsonl(&preds).len(), 60);
    let eval = dir.path().join("eval.json");
    assert_eq!(cli(&["eval", "--gold", p(&dev), "--predictions", p(&preds), "--output", p(&eval)]), 0);
    assert!(read_json(&eval)["macro_f1"].as_f64().unwrap() >= 0.95);

    let again = dir.path().join("preds2.jsonl");
    assert_eq!(cli(&["ensemble", "--pool", p(&pool), "--input", p(&dev), "--output", p(&again), "--top-k", "2"]), 0);
    assert_eq!(cli(&["ensemble", "--pool", p(&pool), "--input", p(&dev), "--output", p(&again), "--top-k", "9"]), 1);
}

#[test]
fn trends_and_correlate() {
    let dir = TempDir::new().unwrap();
    let human = dir.path().join("human.jsonl");
    let args = [
        "aggregate", "--corpus", fx("corpus.jsonl"), "--expert", fx("expert.csv"),
        "--adjudications", fx("adjudications.csv"), "--crowd", fx("crowd.csv"),
        "--output", p(&human),
    ];
    assert_eq!(cli(&args), 0);
    let tdir = dir.path().join("trends");
    assert_eq!(cli(&["trends", "--labeled", p(&human), "--out-dir", p(&tdir), "--zero-fill", "--smooth"]), 0);
    let daily = std::fs::read_to_string(tdir.join("daily.csv")).unwrap();
    assert!(daily.starts_with("date,S,A,O,sa_ratio\n"));
    let counted: u64 = daily
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).take(3).map(|c| c.parse::<u64>().unwrap()).sum::<u64>())
        .sum();
    assert_eq!(counted as usize, read_jsonl(&human).len());
    assert!(std::fs::read_to_string(tdir.join("long.csv")).unwrap().contains("sa_ratio_ma7"));
    let weekly = read_json(&tdir.join("weekly.json"));
    assert!(weekly["all_labels"]["weeks"].as_array().unwrap().len() >= 13);

    let out = dir.path().join("corr.json");
    let ext = fixtures().join("infections.csv");
    let args = ["correlate", "--daily", leak(tdir.join("daily.csv")), "--external", p(&ext), "--metric", "A", "--output", p(&out)];
    assert_eq!(cli(&args), 0);
    let rho = read_json(&out)["rho"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&rho));
    let args = ["correlate", "--labeled", p(&human), "--external", p(&ext), "--metric", "bogus", "--output", p(&out)];
    assert_eq!(cli(&args), 1);
}

#[test]
fn splits_and_augment() {
    let dir = TempDir::new().unwrap();
    let human = dir.path().join("human.jsonl");
    let args = [
        "aggregate", "--corpus", fx("corpus.jsonl"), "--expert", fx("expert.csv"),
        "--adjudications", fx("adjudications.csv"), "--output", p(&human),
    ];
    assert_eq!(cli(&args), 0);
    let sdir = dir.path().join("splits");
    let args = ["splits", "--human", p(&human), "--dev", "40", "--test", "40", "--n-splits", "2", "--seed", "1", "--out-dir", p(&sdir)];
    assert_eq!(cli(&args), 0);
    let s0 = read_json(&sdir.join("split_0.json"));
    assert_eq!(s0["counts"]["expert_train"], 220 - 80);
    let args = ["splits", "--human", p(&human), "--dev", "200", "--test", "40", "--out-dir", p(&sdir)];
    assert_eq!(cli(&args), 2);

    let out = dir.path().join("aug.jsonl");
    let args = ["augment", "--human", p(&human), "--oversample", "--back-translate", "--output", p(&out)];
    assert_eq!(cli(&args), 0);
    let rows = read_jsonl(&out);
    assert!(rows.iter().any(|r| r["provenance"] == "backtranslation"));
    assert!(rows.len() > 2 * 220);
}

/// Spawns the mock endpoint in HTTP mode and returns it with its address.
fn http_mock(extra: &[&str]) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_mock-endpoint"))
        .args(["--http", "127.0.0.1:0"])
        .args(extra)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (child, format!("http://{addr}"))
}

fn tweet(i: usize) -> Tweet {
    use chrono::TimeZone;
    Tweet::new(format!("h{i}"), format!("text {i}"), Lang::En, chrono::Utc.with_ymd_and_hms(2020, 3, 1, 0, 0, 0).unwrap())
}

#[test]
fn http_endpoint_round_trip() {
    let (mut child, url) = http_mock(&[]);
    let ep = ExternalEndpoint::new(EndpointConfig {
        transport: Transport::Http { url },
        timeout_ms: 5000,
    });
    for i in 0..50 {
        let t = tweet(i);
        let probs = ep.request(&t).unwrap();
        let want = solidarity_cli::mock::scores_for(&t.id, &t.text);
        for c in 0..3 {
            assert!((probs.0[c] - want[c]).abs() < 1e-9);
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn endpoint_protocol_violations_are_reported() {
    let mock = env!("CARGO_BIN_EXE_mock-endpoint").to_string();
    let wrong = ExternalEndpoint::new(EndpointConfig {
        transport: Transport::Subprocess { command: vec![mock.clone(), "--wrong-id".into()] },
        timeout_ms: 5000,
    });
    let err = wrong.request(&tweet(0)).unwrap_err().to_string();
    assert!(err.contains("h0"), "{err}");

    let slow = ExternalEndpoint::new(EndpointConfig {
        transport: Transport::Subprocess { command: vec![mock, "--delay-ms".into(), "2000".into()] },
        timeout_ms: 200,
    });
    assert!(slow.request(&tweet(1)).is_err());

    let missing = ExternalEndpoint::new(EndpointConfig {
        transport: Transport::Subprocess { command: vec!["/nonexistent/model-server".into()] },
        timeout_ms: 200,
    });
    assert!(missing.request(&tweet(2)).is_err());
}

#[test]
fn autolabel_with_subprocess_endpoints() {
    let dir = TempDir::new().unwrap();
    // 6 tweets; members vote according to their table
    let corpus: String = (0..6)
        .map(|i| format!("{{\"id\":\"u{i}\",\"text\":\"t {i}\",\"lang\":\"en\",\"created_at\":\"2020-03-0{}T00:00:00Z\"}}\n", i + 1))
        .collect();
    let corpus = write(&dir, "corpus.jsonl", &corpus);
    // per tweet: the label and how many of 9 members give it (others say O, or A when the label is O)
    let plan = [("S", 9), ("A", 7), ("O", 8), ("S", 6), ("A", 3), ("S", 7)];
    let mut members = Vec::new();
    for m in 0..9 {
        let table: String = plan
            .iter()
            .enumerate()
            .map(|(i, (label, n))| {
                let l = if m < *n { *label } else if *label == "O" { "A" } else { "O" };
                format!("{{\"id\":\"u{i}\",\"label\":\"{l}\"}}\n")
            })
            .collect();
        let table = write(&dir, &format!("table{m}.jsonl"), &table);
        members.push(serde_json::json!({
            "id": format!("mock{m}"),
            "dev_score": 0.5 + m as f64 / 100.0,
            "endpoint": {"transport": "subprocess", "command": [env!("CARGO_BIN_EXE_mock-endpoint"), "--table", p(&table)]},
        }));
    }
    let pool = write(
        &dir,
        "pool.json",
        &serde_json::json!({"format": "solidarity-pool", "version": 1, "members": members}).to_string(),
    );
    let exclude = write(&dir, "human.jsonl", "{\"id\":\"u5\"}\n");
    let out = dir.path().join("auto.jsonl");
    let args = ["autolabel", "--pool", p(&pool), "--corpus", p(&corpus), "--exclude", p(&exclude), "--cap", "10", "--output", p(&out)];
    assert_eq!(cli(&args), 0);
    let got: Vec<(String, String)> = read_jsonl(&out)
        .iter()
        .map(|r| (r["id"].as_str().unwrap().to_string(), r["label"].as_str().unwrap().to_string()))
        .collect();
    let want: Vec<(String, String)> =
        [("u0", "S"), ("u1", "A"), ("u2", "O")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let mut got_sorted = got.clone();
    got_sorted.sort();
    assert_eq!(got_sorted, want);
    let report = read_json(&dir.path().join("auto.jsonl.report.json"));
    assert_eq!(report["summary"]["excluded"], 1);

    // the same pool as an ensemble
    let preds = dir.path().join("preds.jsonl");
    assert_eq!(cli(&["ensemble", "--pool", p(&pool), "--input", p(&corpus), "--output", p(&preds)]), 0);
    let labels: Vec<LabelCoarse> = read_jsonl(&preds).iter().map(|r| serde_json::from_value(r["label"].clone()).unwrap()).collect();
    use LabelCoarse::*;
    assert_eq!(labels, [S, A, O, S, O, S]);
}

#[test]
fn pipeline_is_deterministic_and_validates_config() {
    let dir = TempDir::new().unwrap();
    let cfg = fixtures().join("run.json");
    let small = ["--set", "splits.n=1", "--set", "pool_candidates=9", "--set", "ensemble_size=5", "--set", "hyperparams.dim=4096"];
    let run = |out: &Path| {
        let mut args = vec!["pipeline", "--config", p(&cfg), "--out-dir", p(out)];
        args.extend_from_slice(&small);
        cli(&args)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&a), 0);
    assert_eq!(run(&b), 0);
    for f in ["predictions.jsonl", "split_0/auto.jsonl", "split_0/eval.json", "trends/daily.csv", "correlation.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = read_json(&a.join("run_report.json"));
    validate_report(&report).unwrap();
    assert!(report["seeds"]["split0.autolabel"].is_u64());

    let bad = dir.path().join("c");
    let args = ["pipeline", "--config", p(&cfg), "--out-dir", p(&bad), "--set", "autolabel.k=10"];
    assert_eq!(cli(&args), 1);
    let args = ["pipeline", "--config", p(&cfg), "--out-dir", p(&bad), "--set", "unknown_key=1"];
    assert_eq!(cli(&args), 1);
    let cfg_bad = write(&dir, "bad.json", r#"{"corpus": "nope.jsonl"}"#);
    assert_eq!(cli(&["pipeline", "--config", p(&cfg_bad)]), 1);
}

#[test]
fn augment_with_http_translator_retries() {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        let mut served = 0;
        let mut failed_once = false;
        for mut req in server.incoming_requests() {
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            if !failed_once {
                failed_once = true;
                req.respond(tiny_http::Response::from_string("busy").with_status_code(503)).unwrap();
                continue;
            }
            let v: Value = serde_json::from_str(&body).unwrap();
            let text = format!("{} ({})", v["q"].as_str().unwrap(), v["target"].as_str().unwrap());
            req.respond(tiny_http::Response::from_string(serde_json::json!({ "text": text }).to_string())).unwrap();
            served += 1;
            if served == 4 {
                break;
            }
        }
    });
    let dir = TempDir::new().unwrap();
    let human = write(
        &dir,
        "h.jsonl",
        "{\"id\":\"1\",\"text\":\"hello\",\"lang\":\"en\",\"created_at\":\"2020-03-01T00:00:00Z\",\"label\":\"S\",\"provenance\":\"expert\"}\n\
         {\"id\":\"2\",\"text\":\"hallo\",\"lang\":\"de\",\"created_at\":\"2020-03-01T00:00:00Z\",\"label\":\"A\",\"provenance\":\"crowd\"}\n",
    );
    let out = dir.path().join("aug.jsonl");
    let args = ["augment", "--human", p(&human), "--back-translate", "--translator", "http", "--translator-url", &url, "--output", p(&out)];
    assert_eq!(cli(&args), 0);
    handle.join().unwrap();
    let rows = read_jsonl(&out);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2]["text"], "hello (de) (en)");
    assert_eq!(rows[3]["text"], "hallo (en) (de)");
}

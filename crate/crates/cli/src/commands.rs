use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use conceptkit::catalog::Category;
use conceptkit::eval::{self, EvalReport, MappingTrialConfig};
use conceptkit::mapping::load_gold;
use conceptkit::provider::templates::DATASET_GEN;
use conceptkit::provider::{
    params, Capability, Gateway, MockScript, ProviderConfig, ProviderMode, ProviderRequest,
};
use conceptkit::segmentation::{
    lr_at_epoch, shapes_schema, split_dataset, synthetic_shapes, train_dataset, ClassSchema, Dataset, Sample,
    SegModel, TrainingConfig,
};
use conceptkit_server::ServerConfig;
use serde_json::json;

use crate::error::CliError;
use crate::{GenArgs, IouArgs, MappingArgs, OutputArgs, ProviderChoice, ServeArgs, SplitArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

enum Target {
    Shapes,
    Object(Category),
}

fn parse_target(s: &str) -> Result<Target> {
    if s.eq_ignore_ascii_case("shapes") {
        return Ok(Target::Shapes);
    }
    s.parse()
        .map(Target::Object)
        .map_err(|e| CliError::BadArgs(format!("{e}; or shapes")))
}

fn parse_category(s: &str) -> Result<Category> {
    s.parse().map_err(|e| CliError::BadArgs(format!("{e}")))
}

fn provider_config(path: Option<&Path>, choice: ProviderChoice) -> Result<ProviderConfig> {
    let mut config = match path {
        Some(p) => ProviderConfig::from_file(p)?,
        None => ProviderConfig::default(),
    };
    config.mode = match choice {
        ProviderChoice::Mock => ProviderMode::Mock,
        ProviderChoice::Live => ProviderMode::Live,
    };
    Ok(config)
}

pub fn dataset_gen(a: &GenArgs) -> Result<()> {
    let target = parse_target(&a.category)?;
    if a.n == 0 || a.size < 8 {
        return Err(CliError::BadArgs("need --n >= 1 and --size >= 8".into()));
    }
    let (schema, object, prefix) = match target {
        Target::Shapes => (shapes_schema(), "shape", "shape".to_owned()),
        Target::Object(c) => (c.schema(), c.object_name(), c.slug().replace('-', "_")),
    };
    let prompt = conceptkit::provider::render_template(DATASET_GEN, &[("Object_Name", object)])
        .map_err(anyhow::Error::from)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("prompts.txt"), vec![prompt.as_str(); a.n].join("\n") + "\n")?;

    match a.provider {
        ProviderChoice::Mock => {
            let ds = Dataset::create(&a.out, schema)?;
            for i in 0..a.n {
                let seed = a.seed + i as u64;
                let (image, mask) = match target {
                    Target::Shapes => synthetic_shapes(a.size, seed),
                    Target::Object(c) => c.render(a.size, seed),
                };
                ds.add(&Sample {
                    id: format!("{prefix}{i:03}"),
                    image,
                    mask,
                })?;
            }
            println!("wrote {} labelled samples to {}", a.n, a.out.display());
        }
        ProviderChoice::Live => {
            let gw = Gateway::from_config(&provider_config(a.provider_config.as_deref(), a.provider)?)?;
            let dir = a.out.join("unlabeled");
            fs::create_dir_all(&dir)?;
            for i in 0..a.n {
                let req = ProviderRequest::new(Capability::Generate, prompt.clone())
                    .param(params::CATEGORY, object)
                    .param(params::SIZE, a.size)
                    .param(params::INDEX, i as u64)
                    .param(params::COUNT, 1u64);
                let resp = gw.invoke(&req)?;
                let image = resp
                    .images
                    .into_iter()
                    .next()
                    .ok_or_else(|| CliError::Provider("generator returned no image".into()))?;
                fs::write(dir.join(format!("{prefix}{i:03}.png")), image.to_png())?;
            }
            println!(
                "wrote {} unlabelled images to {}; annotate them into images/ and masks/",
                a.n,
                dir.display()
            );
        }
    }
    Ok(())
}

pub fn dataset_split(a: &SplitArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    let split = split_dataset(&ds.ids()?, a.seed)?;
    ds.write_split(&split)?;
    let (train, val, test) = split.sizes();
    println!("train {train}  val {val}  test {test}");
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let ds = Dataset::open(&a.data)?;
    if let Some(c) = &a.category {
        let expected = match parse_target(c)? {
            Target::Shapes => "shapes".to_owned(),
            Target::Object(c) => c.slug().to_owned(),
        };
        if ds.schema().category != expected {
            return Err(CliError::Dataset(format!(
                "dataset category is {:?}, not {expected:?}",
                ds.schema().category
            )));
        }
    }
    let config: TrainingConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str(&text).map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?
        }
        None => TrainingConfig::default(),
    };
    config.validate()?;
    let split = ds.read_split()?;
    let outcome = train_dataset(&ds, &split, &config, &a.out)?;
    println!("epoch  loss      val_mIoU  lr");
    for m in &outcome.metrics {
        println!("{:>5}  {:.6}  {:.4}    {:e}", m.epoch, m.loss, m.val_mean_iou, m.lr);
        debug_assert_eq!(Some(m.lr), lr_at_epoch(&config, m.epoch).ok());
    }
    let manifest = outcome.model.manifest();
    println!(
        "best epoch {} (val mIoU {:.4}); model written to {}",
        manifest.best_epoch,
        manifest.best_val_mean_iou,
        a.out.display()
    );
    if a.eval_test {
        let test = ds.load_many(&split.test)?;
        let report = eval::evaluate_segmenter(&outcome.model, &test, false)?;
        println!("test mIoU {:.4}", report.mean_iou);
    }
    Ok(())
}

fn load_schema(s: &str) -> Result<ClassSchema> {
    let path = Path::new(s);
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| CliError::Dataset(format!("{s}: {e}")))?;
        let schema: ClassSchema =
            serde_json::from_str(&text).map_err(|e| CliError::Dataset(format!("{s}: {e}")))?;
        schema.validate().map_err(|e| CliError::Dataset(e.to_string()))?;
        return Ok(schema);
    }
    Ok(match parse_target(s)? {
        Target::Shapes => shapes_schema(),
        Target::Object(c) => c.schema(),
    })
}

fn emit(report: &EvalReport, out: &OutputArgs) -> Result<()> {
    if let Some(p) = &out.report {
        fs::write(p, report.to_json() + "\n")?;
    }
    if out.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.render_table());
    }
    Ok(())
}

pub fn eval_iou(a: &IouArgs) -> Result<()> {
    let (iou, category, config) = match (&a.model, &a.data, &a.pred_dir, &a.gt_dir) {
        (Some(model), Some(data), None, None) => {
            let model = SegModel::load(model)?;
            let ds = Dataset::open(data)?;
            if model.manifest().schema != *ds.schema() {
                return Err(CliError::Dataset("model and dataset schemas differ".into()));
            }
            let split = ds.read_split()?;
            let ids = split
                .part(&a.split)
                .ok_or_else(|| CliError::BadArgs(format!("unknown split {:?}; use train, val or test", a.split)))?;
            let samples = ds.load_many(ids)?;
            let report = eval::evaluate_segmenter(&model, &samples, a.include_background)?;
            let config = json!({
                "model_hash": model.training_hash(),
                "split": a.split,
                "split_seed": split.seed,
                "include_background": a.include_background,
            });
            (report, ds.schema().category.clone(), config)
        }
        (None, None, Some(pred), Some(gt)) => {
            let schema = load_schema(a.schema.as_deref().unwrap_or_default())?;
            let report = eval::evaluate_mask_dirs(pred, gt, &schema, a.include_background)?;
            let config = json!({
                "pred_dir": pred,
                "gt_dir": gt,
                "include_background": a.include_background,
            });
            (report, schema.category, config)
        }
        _ => {
            return Err(CliError::BadArgs(
                "pass either --model and --data, or --pred-dir, --gt-dir and --schema".into(),
            ))
        }
    };
    let report = EvalReport {
        category,
        seed: 0,
        config,
        iou: Some(iou),
        mapping: None,
    };
    emit(&report, &a.output)
}

fn parse_plant(s: &str) -> Result<(String, u64)> {
    let (f, t) = s
        .rsplit_once('@')
        .ok_or_else(|| CliError::BadArgs(format!("--plant-error {s:?}: expected FUNCTION@TRIAL")))?;
    let t = t
        .parse()
        .map_err(|_| CliError::BadArgs(format!("--plant-error {s:?}: trial must be a number")))?;
    Ok((f.trim().to_owned(), t))
}

pub fn eval_mapping(a: &MappingArgs) -> Result<()> {
    let category = parse_category(&a.category)?;
    if a.trials == 0 {
        return Err(CliError::BadArgs("--trials must be at least 1".into()));
    }
    let gold = match &a.gold {
        Some(p) => load_gold(p)?,
        None => {
            let default = PathBuf::from("gold").join(format!("{}.json", category.slug()));
            if default.exists() {
                load_gold(&default)?
            } else {
                eval::gold_for(category)
            }
        }
    };
    let plants = a.plant_error.iter().map(|s| parse_plant(s)).collect::<Result<Vec<_>>>()?;
    let gw = match a.provider {
        ProviderChoice::Mock => {
            let mut script = match &a.mock_script {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?
                }
                None => MockScript::new(a.mock_seed),
            };
            let planted = plants.iter().map(|(f, t)| eval::planted_error_rule(f, *t));
            script.rules.splice(0..0, planted);
            Gateway::mock_with_script(script)
        }
        ProviderChoice::Live => {
            if !plants.is_empty() {
                return Err(CliError::BadArgs("--plant-error needs the mock provider".into()));
            }
            Gateway::from_config(&provider_config(a.provider_config.as_deref(), a.provider)?)?
        }
    };
    let cfg = MappingTrialConfig {
        category,
        trials: a.trials,
        size: a.size,
        seed: a.seed,
    };
    let extra = json!({
        "provider": if a.provider == ProviderChoice::Mock { "mock" } else { "live" },
        "mock_seed": a.mock_seed,
        "planted": a.plant_error,
    });
    let report = EvalReport::mapping(&gw, &cfg, &gold, extra)?;
    emit(&report, &a.output)
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let mut config: ServerConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?
        }
        None => ServerConfig::default(),
    };
    if let Some(p) = &a.provider_config {
        config.provider = ProviderConfig::from_file(p)?;
    }
    config.provider = config.provider.apply_env()?;
    if let Some(d) = &a.data_dir {
        config.data_dir = d.clone();
    }
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(conceptkit_server::run(addr, config, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    }))?;
    Ok(())
}

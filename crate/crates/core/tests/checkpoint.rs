use nsrl::checkpoint::{Checkpoint, CheckpointError, VERSION_OFFSET};
use nsrl::config::RunConfig;
use nsrl::policy::build_policy;
use nsrl::train::{Metrics, Trainer};

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.train.num_envs = 2;
    c.train.num_steps = 32;
    c.train.num_minibatches = 2;
    c.train.update_epochs = 2;
    c.train.total_timesteps = 64 * 3;
    c
}

fn trainer(c: &RunConfig) -> (Trainer, nsrl::assets::AssetSources) {
    let r = c.resolve().unwrap();
    let p = build_policy(&r.bundle, &r.spec, c.blender, c.train.seed).unwrap();
    (Trainer::new(c.train.clone(), p, &r.spec).unwrap(), r.sources)
}

#[test]
fn save_load_save_is_byte_identical() {
    let c = small_config();
    let (mut t, sources) = trainer(&c);
    t.iterate().unwrap();
    let bytes = Checkpoint::from_trainer(&c, &sources, &t).to_bytes();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn resumed_training_continues_the_same_metric_stream() {
    let c = small_config();
    let (mut full, sources) = trainer(&c);
    let uninterrupted: Vec<Metrics> = (0..3).map(|_| full.iterate().unwrap()).collect();

    let (mut first, _) = trainer(&c);
    first.iterate().unwrap();
    let bytes = Checkpoint::from_trainer(&c, &sources, &first).to_bytes();
    let mut resumed = Checkpoint::from_bytes(&bytes).unwrap().trainer().unwrap();
    let rest: Vec<Metrics> = (0..2).map(|_| resumed.iterate().unwrap()).collect();
    assert_eq!(rest, uninterrupted[1..]);
    assert_eq!(resumed.policy.tensors(), full.policy.tensors());
}

#[test]
fn version_and_corruption_are_rejected() {
    let c = small_config();
    let (t, sources) = trainer(&c);
    let bytes = Checkpoint::from_trainer(&c, &sources, &t).to_bytes();

    let mut v = bytes.clone();
    v[VERSION_OFFSET] ^= 0x7f;
    assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::Version { .. })));

    let mut m = bytes.clone();
    m[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&m), Err(CheckpointError::Magic)));

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(CheckpointError::Corrupt(_))
    ));

    // flip a byte inside the embedded rule text
    let needle = b"up(X):-";
    let pos = bytes.windows(needle.len()).rposition(|w| w == needle).unwrap();
    let mut h = bytes.clone();
    h[pos] = b'v';
    assert!(matches!(Checkpoint::from_bytes(&h), Err(CheckpointError::Hash { .. })));
}

#[test]
fn checkpoint_restores_policy_outputs() {
    let c = small_config();
    let (mut t, sources) = trainer(&c);
    t.iterate().unwrap();
    let ck = Checkpoint::from_bytes(&Checkpoint::from_trainer(&c, &sources, &t).to_bytes()).unwrap();
    let p = ck.policy().unwrap();
    let obs = &t.state.obs[0];
    let (a, b) = (p.step(obs).unwrap(), t.policy.step(obs).unwrap());
    assert_eq!((a.dist, a.beta, a.value), (b.dist, b.beta, b.value));
}

use mmdit_align::harness::RunConfig;
use mmdit_align::model::ModelConfig;

/// Small enough that a few dozen steps run in well under a second.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        depth: 2,
        hidden_dim: 16,
        heads: 2,
        latent_channels: 2,
        latent_height: 4,
        latent_width: 4,
        text_tokens: 2,
        text_embed_dim: 8,
        time_embed_dim: 8,
        mlp_ratio: 2,
        ..ModelConfig::default()
    };
    cfg.align.depth_n = 1;
    cfg.dataset.num_classes = 4;
    cfg.dataset.size = 64;
    cfg.teacher.tokens = 3;
    cfg.teacher.width = 6;
    cfg.eval.count = 8;
    cfg.eval.sampling_steps = 4;
    cfg.run.batch_size = 2;
    cfg.run.steps = 6;
    cfg.run.log_interval = 2;
    cfg
}

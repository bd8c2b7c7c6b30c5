"""Semi-supervised GAN for opinion-spam classification."""

"""DualCoT desk — vision-language-action policy with parallel visual and linguistic latent reasoning."""

__version__ = "0.3.0"

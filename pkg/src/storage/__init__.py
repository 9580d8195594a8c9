"""Binary container and image codecs."""

"""Versioned JSON run configurations (``excirec <cmd> --config preset:NAME``)."""

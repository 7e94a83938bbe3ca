"""GSMFlow: conditional flow feature synthesis for zero-shot classification."""

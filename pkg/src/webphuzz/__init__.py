"""Coverage-guided greybox fuzzer for HTTP/PHP web applications."""

__version__ = "0.1.0"

# Test package for the architecture search engine

# Utils module for the architecture search engine

# Run-configuration and CSV file formats

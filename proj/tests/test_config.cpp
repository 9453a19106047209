// config module tests land with the cli module

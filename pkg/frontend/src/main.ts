// Bootstrap: read the API base from ?api=..., wire the controller to the UI.

import { ApiClient } from "./api.js";
import { Console } from "./controller.js";
import { Ui } from "./views.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? `${window.location.protocol}//${window.location.hostname}:8000`;

const api = new ApiClient(base);
const console_ = new Console(api);
const root = document.getElementById("app")!;
const ui = new Ui(document, root, console_);
void ui.start();

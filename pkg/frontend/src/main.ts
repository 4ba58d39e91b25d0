import { ApiClient } from "./api.js";
import { App } from "./app.js";
import { BrowserReviewerStore, ReviewController } from "./controller.js";
import { QueueState } from "./state.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app container");
}
const controller = new ReviewController(
  new ApiClient(""),
  new QueueState(10),
  new BrowserReviewerStore(),
);
void new App(controller, root).start();
